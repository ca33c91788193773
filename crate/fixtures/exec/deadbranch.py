def pick(flag):
    if flag:
        return "taken"
    else:
        return "never"


print(pick(True))
