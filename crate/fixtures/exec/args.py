import sys

print("args:", " ".join(sys.argv[1:]))
