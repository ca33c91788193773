import time

print("starting", flush=True)
for _ in range(100):
    time.sleep(0.1)
print("Test accuracy: 0.9000")
