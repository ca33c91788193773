import sys

print("loading data")
sys.stderr.write("ValueError: shapes (3,) and (4,) not aligned\n")
sys.exit(1)
