"""Smoke test for the pyfedlorar extension.

Build and install the module first, e.g.

    pip install maturin
    maturin develop -m crates/python/Cargo.toml

then run `python python/smoke_test.py`.
"""

import math

import pyfedlorar as fl


def check_weights():
    w, fallback = fl.compute_weights([100, 300], [0.5, 0.1], "lorar")
    assert not fallback
    assert abs(w[0] - 0.625) < 1e-12 and abs(w[1] - 0.375) < 1e-12
    w, fallback = fl.compute_weights([100, 300], [0.0, 0.0], "lorar")
    assert fallback and w == [0.25, 0.75]
    try:
        fl.compute_weights([1], [0.1], "heavy")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown mechanism accepted")


def check_gradient():
    m = fl.Model("mlp-1-hidden", 3, num_classes=4, hidden_dim=5, activation="tanh")
    w = m.init(7)
    assert len(w) == m.param_dim == 3 * 5 + 5 + 5 * 4 + 4
    xs = [[0.5, -1.0, 2.0], [1.5, 0.25, -0.75]]
    ys = [2, 0]
    loss, grad = m.loss_and_grad(w, xs, ys)
    h = 1e-5
    for j in range(len(w)):
        plus = list(w)
        minus = list(w)
        plus[j] += h
        minus[j] -= h
        fd = (m.loss_and_grad(plus, xs, ys)[0] - m.loss_and_grad(minus, xs, ys)[0]) / (2 * h)
        assert abs(fd - grad[j]) <= 1e-6 * max(1.0, abs(fd)), (j, fd, grad[j])
    assert math.isfinite(loss)


def check_experiments():
    cfg = fl.Config(
        "data.sizes = 60, 30, 15\n"
        "data.input_dim = 4\n"
        "data.num_classes = 3\n"
        "model.hidden_dim = 6\n"
        "algo.rounds = 4\n"
        "eval_every = 2\n"
        "train.max_epochs = 3\n"
    )
    pop = fl.generate_population(cfg)
    assert [c.train_size for c in pop] == [60, 30, 15]
    rows, labels = pop[2].split("train")
    assert len(rows) == len(labels) == 15 and len(rows[0]) == 4

    fed = fl.run_federated(cfg)
    again = fl.run_federated(cfg)
    assert fed.per_client == again.per_client
    assert 0.0 <= fed.macro_avg <= 1.0 and 0.0 <= fed.micro_avg <= 1.0
    correct = sum(c[2] for c in fed.per_client)
    total = sum(c[1] for c in fed.per_client)
    assert abs(fed.micro_avg - correct / total) < 1e-15

    for run in (fl.run_finetune, fl.run_centralized):
        r = run(cfg)
        assert len(r.per_client) == 3
    print(fed.table(cfg.label), end="")

    try:
        fl.Config("no.such.key = 1")
    except ValueError:
        pass
    else:
        raise AssertionError("bad config accepted")


if __name__ == "__main__":
    check_weights()
    check_gradient()
    check_experiments()
    print("smoke test passed")
