import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dopplervfm.autodiff import Tensor, grad, linear, scatter, spmv, stack
from dopplervfm.domain import build_grid, extract_boundary, sector_segmentation
from dopplervfm.mlp import (
    LAYER_SIZES,
    MlpParams,
    WeightFileError,
    forward,
    forward_with_input_jacobian,
    load_weights,
    mlp_init,
    mlp_zeros,
    n_parameters,
    network,
    save_weights,
)
from dopplervfm.phantom import StreamFunctionSpec, stream_function_field, synthesize_doppler
from dopplervfm.pinn import PinnProblem, _flat_grad
import scipy.sparse as sp


def _fd_grad(f, x, h):
    g = np.zeros_like(x)
    for k in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        g[k] = (f(xp) - f(xm)) / (2 * h)
    return g


def test_parameter_count():
    assert n_parameters(LAYER_SIZES) == 18602
    assert mlp_init(7).size == 18602


def test_init_is_seeded_xavier():
    a, b = mlp_init(3), mlp_init(3)
    assert a.values.tobytes() == b.values.tobytes()
    assert not np.array_equal(a.values, mlp_init(4).values)
    W1, b1 = a.split()[:2]
    assert np.abs(W1).max() <= np.sqrt(6 / 62)
    assert not b1.any()


def test_zero_network_outputs_zero():
    pts = np.random.default_rng(0).uniform(-1, 1, (10, 2))
    out = forward_with_input_jacobian(mlp_zeros(), pts)
    assert not out.predictions.any() and not out.input_jacobian.any()


def test_params_must_be_finite():
    vals = np.zeros(n_parameters((2, 3, 2)))
    vals[0] = np.nan
    with pytest.raises(ValueError):
        MlpParams((2, 3, 2), vals)
    with pytest.raises(ValueError):
        MlpParams((2, 3, 2), np.zeros(5))


def test_hand_computed_single_hidden_layer():
    W1 = np.array([[0.5, -0.25], [1.0, 2.0]])
    b1 = np.array([0.1, -0.3])
    W2 = np.array([[1.5, -1.0], [0.25, 0.75]])
    b2 = np.array([0.2, -0.1])
    vals = np.concatenate([W1.ravel(), b1, W2.ravel(), b2])
    p = MlpParams((2, 2, 2), vals)
    x = np.array([[0.3, -0.7], [1.0, 0.5]])
    expected = np.tanh(x @ W1.T + b1) @ W2.T + b2
    out = forward_with_input_jacobian(p, x)
    assert np.allclose(out.predictions, expected, rtol=0, atol=1e-15)
    # Jacobian: W2 diag(1 - a^2) W1
    for n in range(2):
        a = np.tanh(W1 @ x[n] + b1)
        J = W2 @ np.diag(1 - a * a) @ W1
        assert np.allclose(out.input_jacobian[n], J, atol=1e-15)


def test_tiny_weights_give_product_of_matrices():
    rng = np.random.default_rng(1)
    p = mlp_init(1)
    p = p.copy(p.values * 1e-6)
    x = rng.uniform(-1, 1, (5, 2))
    J = forward_with_input_jacobian(p, x).input_jacobian
    Ws = p.split()[::2]
    prod = Ws[0]
    for W in Ws[1:]:
        prod = W @ prod
    assert np.allclose(J, prod[None], rtol=0, atol=1e-8 * np.abs(prod).max() + 1e-40)
    assert np.allclose(J / np.abs(prod).max(), prod[None] / np.abs(prod).max(), atol=1e-8)


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(2)
    p = mlp_init(5)
    x = rng.uniform(-1, 1, (100, 2))
    J = forward_with_input_jacobian(p, x).input_jacobian
    h = 1e-5
    for d in range(2):
        e = np.zeros(2)
        e[d] = h
        fd = (forward(p, x + e).predictions - forward(p, x - e).predictions) / (2 * h)
        err = np.abs(fd - J[:, :, d]) / np.maximum(np.abs(J[:, :, d]), 1e-3)
        assert err.max() < 1e-5


def test_jacobian_predictions_bit_identical_to_forward():
    x = np.random.default_rng(3).uniform(-1, 1, (33, 2))
    p = mlp_init(9)
    assert forward(p, x).predictions.tobytes() == forward_with_input_jacobian(p, x).predictions.tobytes()
    assert forward(p, x).predictions.tobytes() == forward(p, x).predictions.tobytes()


def test_batch_order_preserved():
    x = np.random.default_rng(4).uniform(-1, 1, (20, 2))
    p = mlp_init(2)
    full = forward(p, x).predictions
    rev = forward(p, x[::-1]).predictions
    assert np.allclose(full[::-1], rev, atol=1e-15)


def test_non_finite_points_rejected():
    with pytest.raises(ValueError):
        forward(mlp_init(0), np.array([[0.0, np.inf]]))
    with pytest.raises(ValueError):
        forward(mlp_init(0), np.zeros((3, 3)))


def test_sum_of_squares_gradient():
    p = mlp_init(0)
    ts = p.tensors()
    loss = ts[0].square().sum()
    for t in ts[1:]:
        loss = loss + t.square().sum()
    g = grad(loss, ts)
    assert np.allclose(np.concatenate([x.ravel() for x in g]), 2 * p.values, rtol=0, atol=0)


def test_non_scalar_loss_rejected():
    t = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        grad(t * 2.0, [t])
    with pytest.raises(TypeError):
        grad(np.ones(1), [t])


def test_primitive_gradients_against_fd():
    rng = np.random.default_rng(5)
    A = sp.random(6, 8, density=0.4, random_state=1, format="csr")
    W = rng.normal(size=(3, 8))
    x0 = rng.normal(size=8)

    def build(v):
        x = Tensor(v, requires_grad=True)
        y = spmv(A, x)
        z = linear(stack([x[:4], x[4:]], axis=0), Tensor(W[:, :4]))
        s = scatter(y[np.array([0, 2, 2])], np.array([1, 3, 5]), 7)
        loss = (y.huber(0.3).sum() + z.tanh().square().sum() + (s * 1.5).abs().sum() - (x * x0).sum())
        return x, loss

    x, loss = build(x0)
    (g,) = grad(loss, [x])
    fd = _fd_grad(lambda v: float(build(v)[1].data), x0, 1e-6)
    assert np.allclose(g, fd, rtol=1e-6, atol=1e-7)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_huber_loss_of_one_output_gradient(seed):
    rng = np.random.default_rng(seed)
    sizes = (2, 5, 5, 2)
    p = mlp_init(seed, sizes)
    p = p.copy(p.values + 0.1 * rng.normal(size=p.size))
    x0 = rng.uniform(-1, 1, (1, 2))
    c = rng.normal()

    def f(v):
        return float(network(p.split(v), x0).data[0, 0] - c)

    ts = p.tensors()
    y = network(ts, x0)
    loss = (y[0, 0] - c).huber(1.0)
    g = np.concatenate([t.ravel() for t in grad(loss, ts)])
    h = 1e-6
    fd = _fd_grad(lambda v: float(np.where(abs(f(v)) < 1, 0.5 * f(v) ** 2, abs(f(v)) - 0.5)), p.values, h)
    assert np.allclose(g, fd, rtol=1e-4, atol=1e-8)


def _composite_problem(seed):
    g = build_grid(5, 6, 0.03, 0.01, -0.4, 0.15)
    seg = sector_segmentation(g, 0)
    truth = stream_function_field(StreamFunctionSpec.single_vortex(), g, seg)
    frame = synthesize_doppler(truth, seg, g, snr_db=20.0, seed=seed)
    bc = extract_boundary(seg, g, truth)
    return PinnProblem(frame, bc)


@pytest.mark.parametrize("seed", range(20))
def test_composite_loss_gradient_matches_fd(seed):
    problem = _composite_problem(seed)
    sizes = (2, 6, 6, 2)
    p = mlp_init(seed, sizes)
    rng = np.random.default_rng(seed)
    p = p.copy(p.values + 0.3 * rng.normal(size=p.size))
    mu = rng.uniform(0.5, 2, 4)

    def total(terms):
        return terms[0] * mu[0] + terms[1] * mu[1] + terms[2] * mu[2] + terms[3] * mu[3]

    weights, terms = problem.forward_losses(p.values, p)
    loss = total(terms)
    loss.backward()
    g = _flat_grad(weights)

    def f(v):
        return float(total(problem.forward_losses(v, p)[1]).data)

    fd = _fd_grad(f, p.values, 1e-4)
    rel = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-4)
    assert rel.max() < 1e-4


def test_save_load_round_trip(tmp_path):
    p = mlp_init(11)
    p.meta["input_box"] = [0.0, 1.0, -1.0, 1.0]
    path = tmp_path / "w.bin"
    save_weights(p, path)
    q = load_weights(path)
    assert q.values.tobytes() == p.values.tobytes()
    assert q.layer_sizes == LAYER_SIZES and q.meta == p.meta


def test_load_rejects_bad_files(tmp_path):
    p = mlp_init(0, (2, 4, 2))
    path = tmp_path / "w.bin"
    save_weights(p, path)
    with pytest.raises(WeightFileError, match="architecture"):
        load_weights(path)
    assert load_weights(path, expected_layer_sizes=(2, 4, 2)).size == p.size
    raw = path.read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-5])
    with pytest.raises(WeightFileError):
        load_weights(tmp_path / "t.bin", expected_layer_sizes=None)
    (tmp_path / "m.bin").write_bytes(b"junk" + raw)
    with pytest.raises(WeightFileError):
        load_weights(tmp_path / "m.bin")
    flipped = bytearray(raw)
    flipped[-1] ^= 0xFF
    (tmp_path / "c.bin").write_bytes(bytes(flipped))
    with pytest.raises(WeightFileError, match="checksum"):
        load_weights(tmp_path / "c.bin", expected_layer_sizes=None)
    (tmp_path / "h.bin").write_bytes(raw[:10])
    with pytest.raises(WeightFileError):
        load_weights(tmp_path / "h.bin")
