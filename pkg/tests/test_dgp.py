import json
import math

import numpy as np
import pytest

from dynpanel.dgp import (
    DgpConfig,
    EtaLaw,
    InitRegime,
    difference_panel,
    read_panel_csv,
    simulate,
    write_panel_csv,
)


def cfg(**kw):
    base = dict(rho_star=0.5, sigma2_star=1.0, N=50, T=4, seed=1)
    base.update(kw)
    return DgpConfig(**base)


def test_recursion_holds_exactly():
    d = simulate(cfg(init_regime=InitRegime(kind="iid-normal")))
    rho, sig = 0.5, 1.0
    lhs = d.Y_full[:, 1:]
    rhs = rho * d.Y_full[:, :-1] + d.eta_true[:, None] + sig * d.u
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_seed_reproducible_and_distinct():
    a, b, c = simulate(cfg()), simulate(cfg()), simulate(cfg(seed=2))
    assert np.array_equal(a.Y_full, b.Y_full)
    assert not np.array_equal(a.Y_full, c.Y_full)


def test_scaled_to_omega_is_exact():
    d = simulate(cfg(eta_law=EtaLaw(omega2=2.5), sigma2_star=1.7))
    assert float(d.eta_true @ d.eta_true) / (1.7 * 50) == pytest.approx(2.5, rel=1e-12)


def test_zero_init_and_fixed_constant():
    assert simulate(cfg()).zero_initial
    d = simulate(cfg(init_regime=InitRegime(kind="fixed-constant", k=2.0)))
    assert np.all(d.y1 == 2.0)


def test_fixed_vector_effects():
    vals = tuple(float(i) for i in range(50))
    d = simulate(cfg(eta_law=EtaLaw(kind="fixed-vector", values=vals)))
    assert np.array_equal(d.eta_true, np.arange(50.0))
    with pytest.raises(ValueError):
        cfg(eta_law=EtaLaw(kind="fixed-vector", values=(1.0, 2.0)))


def test_stationary_mean_and_variance():
    d = simulate(cfg(N=200000, T=2, rho_star=0.6, eta_law=EtaLaw(kind="fixed-vector", value=0.8),
                     init_regime=InitRegime(kind="stationary")))
    # stationary: E y = eta/(1-rho) = 2, Var y = sigma2/(1-rho^2) = 1.5625
    se_mean = math.sqrt(1.5625 / 200000)
    for t in range(3):
        col = d.Y_full[:, t]
        assert abs(col.mean() - 2.0) < 5 * se_mean
        assert abs(col.var() - 1.5625) < 0.02


def test_stationary_needs_stable_rho():
    with pytest.raises(ValueError, match=r"\|rho_star\| < 1"):
        cfg(rho_star=1.0, init_regime=InitRegime(kind="stationary"))


def test_skewed_mass_at_zero():
    d = simulate(cfg(N=20000, init_regime=InitRegime(kind="skewed-mass-at-zero", p0=0.7, scale=2.0)))
    assert abs(np.mean(d.y1 == 0) - 0.7) < 0.02
    assert np.all(d.y1 >= 0)


@pytest.mark.parametrize("bad", [
    dict(sigma2_star=0.0), dict(N=2), dict(T=1), dict(seed=-1),
])
def test_validation(bad):
    with pytest.raises(ValueError):
        cfg(**bad)


def test_invalid_kinds():
    with pytest.raises(ValueError):
        EtaLaw(kind="bogus")
    with pytest.raises(ValueError):
        InitRegime(kind="bogus")
    with pytest.raises(ValueError):
        InitRegime(p0=1.5)
    with pytest.raises(ValueError):
        EtaLaw(kind="iid-normal", var=-1.0)


def test_difference_panel_zero_first_column():
    d = simulate(cfg(init_regime=InitRegime(kind="fixed-constant", k=1.5), eta_law=EtaLaw(kind="iid-normal")))
    dd = difference_panel(d)
    assert dd.zero_initial
    assert np.allclose(dd.eta_true, d.eta_true - 0.5 * 1.5)
    # differenced data obey the model with the transformed effects
    rhs = 0.5 * dd.Y_full[:, :-1] + dd.eta_true[:, None] + dd.u
    assert np.allclose(dd.Y_full[:, 1:], rhs, atol=1e-12)


def test_csv_round_trip(tmp_path):
    c = cfg(init_regime=InitRegime(kind="iid-normal"))
    d = simulate(c)
    p, meta = write_panel_csv(d, tmp_path / "x.csv")
    back = read_panel_csv(p)
    assert np.array_equal(back.Y_full, d.Y_full)
    assert back.config == c
    assert json.loads(meta.read_text())["schema_version"] == 1
    header = p.read_text().splitlines()[0]
    assert header == "id,y1,y2,y3,y4,y5"


def test_csv_byte_identical(tmp_path):
    write_panel_csv(simulate(cfg()), tmp_path / "a.csv")
    write_panel_csv(simulate(cfg()), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


@pytest.mark.parametrize("text,msg", [
    ("", "empty"),
    ("id,y1,y3\n1,0,1\n", "expected columns"),
    ("id,y1,y2\n1,0\n", ":2:"),
    ("id,y1,y2\n1,0,1\n2,0,abc\n", ":3:"),
    ("id,y1,y2\n1,0,nan\n", "non-finite"),
])
def test_csv_errors(tmp_path, text, msg):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(ValueError, match=msg):
        read_panel_csv(p)


def test_rotated_data_keeps_model():
    from dynpanel.kernels import sample_orthogonal

    d = simulate(cfg())
    g = sample_orthogonal(50, seed=3)
    r = d.rotated(g)
    rhs = 0.5 * r.Y_full[:, :-1] + r.eta_true[:, None] + r.u
    assert np.allclose(r.Y_full[:, 1:], rhs, atol=1e-10)
