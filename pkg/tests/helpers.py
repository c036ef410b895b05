"""Finite-difference oracles and acceptance-line reporting shared by the tests."""
import numpy as np

from slowmap.net import Network

STEP = 1e-6

# one "criterion N: PASS/FAIL ..." line per acceptance criterion, echoed in the summary
ACCEPTANCE_LINES = []


def record(number, title, ok, detail=""):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def random_architecture(rng, polar=False):
    d = 2 if polar else int(rng.integers(2, 13))
    b = int(rng.integers(1, min(d, 4)))
    enc = [int(w) for w in rng.integers(b + 1, 13, size=rng.integers(0, 3))]
    dec = [int(w) for w in rng.integers(b + 1, 13, size=rng.integers(0, 3))]
    widths = [d] + enc + [b] + dec + [d]
    text = "-".join(map(str, widths))
    if polar:
        text = text.replace("2-", "2-[2]-", 1)
    return text


def random_network(rng, polar=False):
    net = Network.from_architecture(random_architecture(rng, polar), seed=int(rng.integers(2**31)))
    for i in net.dense_layer_indices():
        net.b[i][...] = rng.normal(scale=0.3, size=net.b[i].shape)
    return net


def random_inputs(rng, net, n):
    x = rng.normal(size=(n, net.in_dim))
    if net.has_polar:
        x += np.sign(x) * 0.2  # keep away from the origin
    return x


def relative_error(a, b):
    a, b = np.asarray(a, dtype=np.longdouble), np.asarray(b, dtype=np.longdouble)
    scale = np.maximum(np.abs(a), np.abs(b))
    err = np.abs(a - b)
    return float(np.max(np.where(scale > 0, err / np.where(scale > 0, scale, 1), 0)))


def fd_param_grad(net, x, target, step=STEP):
    """Central differences of the MSE loss in extended precision."""
    ref = net.copy(dtype=np.longdouble)
    x = np.asarray(x, dtype=np.longdouble)
    target = np.asarray(target, dtype=np.longdouble)
    out = np.empty(net.n_params, dtype=np.longdouble)
    h = np.longdouble(step)
    for k in range(net.n_params):
        keep = ref.params[k]
        ref.params[k] = keep + h
        up = np.mean((ref(x) - target) ** 2)
        ref.params[k] = keep - h
        down = np.mean((ref(x) - target) ** 2)
        ref.params[k] = keep
        out[k] = (up - down) / (2 * h)
    return out


def fd_input_jacobian(net, x, step=STEP):
    ref = net.copy(dtype=np.longdouble)
    x = np.asarray(x, dtype=np.longdouble)
    h = np.longdouble(step)
    cols = []
    for d in range(len(x)):
        e = np.zeros_like(x)
        e[d] = h
        cols.append((ref.encode(x + e) - ref.encode(x - e)) / (2 * h))
    return np.stack(cols, axis=1)
