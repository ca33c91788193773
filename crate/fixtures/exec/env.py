import os

print("secret:", os.environ.get("RCA_TEST_SECRET", "<unset>"))
print("plain:", os.environ.get("RCA_TEST_PLAIN", "<unset>"))
