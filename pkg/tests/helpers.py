import numpy as np

from ctganru.tabular import Dataset, make_schema


def make_toy(n=2000, seed=0):
    """Bimodal continuous ``x`` plus two discrete columns (``a`` 70/30, ``y`` 80/20)."""
    rng = np.random.default_rng(seed)
    schema = make_schema(["x"], {"a": ["p", "q"], "y": ["0", "1"]}, label="y")
    side = rng.random(n) < 0.5
    x = np.where(side, rng.normal(-5, 1, n), rng.normal(5, 1, n))
    a = (rng.random(n) < 0.3).astype(int)
    y = (rng.random(n) < 0.2).astype(int)
    return Dataset.from_columns(schema, {"x": x, "a": a, "y": y})


def _rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    den = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / den)


def gradient_check(layer, x, seed=0, eps=1e-6):
    """Worst relative error between analytic and central-difference gradients.

    The loss is ``sum(forward(x) * R)`` for a fixed random ``R``; a fresh rng
    with the same seed is passed on every forward so dropout masks repeat.
    """
    from ctganru.neural import iter_layers

    def fwd(inp):
        return layer.forward(inp, training=True, rng=np.random.default_rng(seed))

    out = fwd(x)
    R = np.random.default_rng(seed + 1).normal(size=out.shape)
    gx = layer.backward(R)
    leaves = [l for l in iter_layers(layer) if l.params]
    analytic = [(l, k, l.grads[k].copy()) for l in leaves for k in l.params]

    def loss(inp):
        val = float((fwd(inp) * R).sum())
        for l in iter_layers(layer):
            l._cache = None
        return val

    num_x = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        up = loss(x)
        x[idx] = old - eps
        down = loss(x)
        x[idx] = old
        num_x[idx] = (up - down) / (2 * eps)
    errs = {"input": _rel_err(gx, num_x)}
    for l, k, g in analytic:
        p = l.params[k]
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            up = loss(x)
            p[idx] = old - eps
            down = loss(x)
            p[idx] = old
            num[idx] = (up - down) / (2 * eps)
        errs[f"{l.kind}.{k}"] = _rel_err(g, num)
    return errs


def random_layer(kind, rng):
    """A layer of the given kind with random sizes, plus a matching input batch."""
    from ctganru import neural as nn

    n = int(rng.integers(4, 9))
    d = int(rng.integers(2, 6))
    if kind == "dense":
        layer = nn.Dense(d, int(rng.integers(1, 6)), rng)
        layer.params["b"] = rng.normal(size=layer.out_dim)
    elif kind == "batch_norm":
        layer = nn.BatchNorm(d)
        layer.params["scale"] = rng.normal(1.0, 0.3, d)
        layer.params["shift"] = rng.normal(0.0, 0.3, d)
    elif kind == "dropout":
        layer = nn.Dropout(float(rng.uniform(0.1, 0.6)))
    elif kind.startswith("activation:"):
        layer = nn.Activation(kind.split(":")[1], slope=float(rng.uniform(0.05, 0.3)))
    elif kind == "sequential":
        layer = nn.Sequential([nn.Dense(d, 4, rng), nn.BatchNorm(4), nn.Activation("leaky_relu"), nn.Dense(4, 3, rng)])
    elif kind == "concat_skip":
        layer = nn.ConcatSkip(nn.Sequential([nn.Dense(d, 3, rng), nn.Activation("tanh")]))
    elif kind == "mixed_output":
        sizes = [("tanh", 1), ("gumbel", int(rng.integers(2, 4))), ("gumbel", 2), ("tanh", 2)]
        layer = nn.MixedOutput(sizes, temperature=float(rng.uniform(0.2, 1.0)))
        d = layer.width
        layer.fixed_noise = nn.sample_gumbel(rng, (n, d))
    else:
        raise ValueError(kind)
    x = rng.normal(size=(n, d))
    return layer, x


LAYER_KINDS = (
    "dense",
    "batch_norm",
    "dropout",
    "activation:relu",
    "activation:leaky_relu",
    "activation:tanh",
    "activation:sigmoid",
    "activation:identity",
    "sequential",
    "concat_skip",
    "mixed_output",
)


def smote_fixture():
    """Five minority rows (two continuous, one nominal) plus a few majority rows; no distance ties."""
    from ctganru.tabular import Dataset, make_schema

    schema = make_schema(["u", "v"], {"c": ["r", "g", "b"], "y": ["0", "1"]}, label="y")
    u = [0.0, 1.0, 2.5, 4.5, 7.0, 10.0, 11.0, 12.0]
    v = [0.3, -0.4, 1.1, 0.0, 2.2, 5.0, 5.0, 5.0]
    c = [0, 1, 1, 2, 1, 0, 0, 0]
    y = [1, 1, 1, 1, 1, 0, 0, 0]
    return Dataset.from_columns(schema, {"u": u, "v": v, "c": c, "y": y})


def brute_force_smote_candidates(data, minority_code, k):
    """Enumerate every (seed, neighbour) segment and each seed's nominal majority vote.

    Distances are computed directly: continuous features standardized by the
    minority std, plus ``med**2`` for every nominal mismatch, with ``med`` the
    median of the standardized continuous stds.
    """
    schema = data.schema
    rows = np.flatnonzero(data.labels == minority_code)
    cont = [c.name for c in schema.continuous]
    nom = [c.name for c in schema.discrete if c.name != schema.label_column]
    X = np.column_stack([data.column(n)[rows] for n in cont])
    sd = X.std(axis=0)
    Z = X / np.where(sd > 0, sd, 1.0)
    med = np.median(Z.std(axis=0))
    N = np.column_stack([data.codes(n)[rows] for n in nom]) if nom else np.zeros((len(rows), 0))
    m = len(rows)
    out = []
    for s in range(m):
        d2 = [
            float(np.sum((Z[s] - Z[j]) ** 2) + med**2 * np.sum(N[s] != N[j])) if j != s else np.inf
            for j in range(m)
        ]
        neigh = list(np.argsort(d2)[:k])
        votes = {}
        for j, name in enumerate(nom):
            counts = np.bincount(N[neigh, j], minlength=schema.column(name).n_categories)
            votes[name] = int(np.argmax(counts))
        segs = [(X[s], X[nb]) for nb in neigh]
        out.append({"seed": s, "segments": segs, "votes": votes})
    return out, cont, nom


def on_segment(point, a, b, tol=1e-12):
    """True when ``point = a + t (b - a)`` for a single ``t`` in [0, 1]."""
    d = b - a
    if np.allclose(d, 0):
        return bool(np.allclose(point, a, atol=tol))
    j = int(np.argmax(np.abs(d)))
    t = (point[j] - a[j]) / d[j]
    return bool(-tol <= t <= 1 + tol and np.allclose(a + t * d, point, atol=1e-9))
