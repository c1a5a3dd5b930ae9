"""The registered gradient suite: one analytic-vs-numeric row per case."""

from evp.gradchecks import GRAD_TOL, SUITE, run_suite


def test_suite_covers_required_cases():
    names = [n for n, _ in SUITE]
    primitives = [n for n in names if n.startswith("primitive:")]
    assert len(primitives) == 13
    for required in ("transformer_block", "adaptor_v1", "fourier_mlp",
                     "freq_enhanced_adaptor:reduced",
                     "freq_enhanced_adaptor:full", "decode"):
        assert required in names
    assert sum(1 for n in names if n.startswith("loss:")) == 5


def test_every_case_under_tolerance():
    rows = run_suite(seed=0, h=1e-6)
    assert len(rows) == len(SUITE)
    for name, err in rows:
        assert err < GRAD_TOL, f"{name}: {err:.3e}"


def test_suite_is_deterministic():
    assert run_suite(seed=0) == run_suite(seed=0)
