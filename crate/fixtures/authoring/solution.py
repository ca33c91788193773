import random


def make_split(rng, n):
    xs, ys = [], []
    for i in range(n):
        y = i % 2
        signal = rng.gauss(1.0 if y else -1.0, 1.0)
        noise = rng.gauss(0.0, 50.0)
        xs.append([signal, noise])
        ys.append(y)
    return xs, ys


def standardize(train_x, test_x):
    cols = list(zip(*train_x))
    mu = [sum(c) / len(c) for c in cols]
    sigma = [(sum((v - m) ** 2 for v in c) / len(c)) ** 0.5 for c, m in zip(cols, mu)]

    def apply(xs):
        return [[(v - m) / s for v, m, s in zip(x, mu, sigma)] for x in xs]

    return apply(train_x), apply(test_x)


def centroids(xs, ys):
    out = {}
    for c in (0, 1):
        rows = [x for x, y in zip(xs, ys) if y == c]
        out[c] = [sum(col) / len(rows) for col in zip(*rows)]
    return out


def predict(cents, x):
    def dist(c):
        return sum((a - b) ** 2 for a, b in zip(x, cents[c]))
    return min(cents, key=dist)


def main():
    rng = random.Random(7)
    train_x, train_y = make_split(rng, 200)
    test_x, test_y = make_split(rng, 200)
    train_x, test_x = standardize(train_x, test_x)
    cents = centroids(train_x, train_y)
    correct = sum(predict(cents, x) == y for x, y in zip(test_x, test_y))
    print(f"Test accuracy: {correct / len(test_y):.4f}")


if __name__ == "__main__":
    main()
