import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unosim.config import ConfigError
from unosim.engine import RngStream
from unosim.topology import build_two_dc_fattree
from unosim.workload import (SizeCdf, arrival_rate, class_probability, gen_allreduce_bursts, gen_incast,
                             gen_permutation, load_cdf, parse_cdf, poisson_arrival_times,
                             random_derangement, sample_flow_size)

MiB = 1 << 20
GiB = 1 << 30
G100 = 100e9


@pytest.fixture(scope="module")
def k8():
    return build_two_dc_fattree(k=8, border_links=8)


# ---------------------------------------------------------------- CDF sampling

def test_single_point_cdf_is_degenerate():
    cdf = SizeCdf((4096.0,), (1.0,))
    for u in (0.0, 0.3, 0.999999):
        assert sample_flow_size(cdf, u) == 4096


def test_interpolation_midpoint():
    cdf = SizeCdf.from_points([(1000, 0.5), (2000, 1.0)])
    assert sample_flow_size(cdf, 0.75) == 1500


def test_below_first_point_scales_from_zero_anchor():
    cdf = SizeCdf.from_points([(1000, 0.5), (2000, 1.0)])
    assert sample_flow_size(cdf, 0.25) == 500


def test_parse_cdf_skips_comments_and_validates():
    cdf = parse_cdf("# header\n100\t0.5\n\n200\t1.0\n")
    assert cdf.sizes == (100.0, 200.0)
    with pytest.raises(ValueError):
        parse_cdf("100\t0.5\n200\t0.9\n")
    with pytest.raises(ValueError):
        parse_cdf("200\t0.5\n100\t1.0\n")
    with pytest.raises(ValueError):
        parse_cdf("100 0.5 7\n")


def test_unknown_cdf_name_is_config_error():
    with pytest.raises(ConfigError):
        load_cdf("no-such-distribution")


@pytest.mark.parametrize("name", ["websearch", "alibaba_wan"])
def test_million_samples_within_ks_distance(name):
    cdf = load_cdf(name)
    rng = np.random.default_rng(5)
    n = 10**6
    xs = np.sort([sample_flow_size(cdf, u) for u in rng.random(n)])
    ref = np.array([cdf.cdf(x) for x in xs])
    i = np.arange(1, n + 1)
    d = max(np.max(i / n - ref), np.max(ref - (i - 1) / n))
    assert d <= 0.01


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1, exclude_max=True), st.floats(0, 1, exclude_max=True))
def test_inverse_cdf_is_monotone(u1, u2):
    cdf = load_cdf("websearch")
    lo, hi = sorted((u1, u2))
    assert sample_flow_size(cdf, lo) <= sample_flow_size(cdf, hi)


# ---------------------------------------------------------------- arrivals

def test_arrival_rate_example():
    assert arrival_rate(0.4, 128, G100, 1e6) == pytest.approx(640_000)


def test_flow_ratio_mode_is_count_share():
    assert class_probability(1e6, 5e6, (4, 1), "flows") == pytest.approx(0.2)


def _hosts(n=16):
    return [[f"a{i}" for i in range(n)], [f"b{i}" for i in range(n)]]


def test_byte_share_is_four_to_one():
    intra, inter = load_cdf("websearch"), load_cdf("alibaba_wan")
    b_intra = b_inter = 0
    total = 0
    for seed in range(1, 11):
        arr = poisson_arrival_times(0.5, 10e9, _hosts(), 10**12, RngStream("workload", seed),
                                    intra, inter, max_flows=10_000)
        total += len(arr)
        for _, _, _, size, cls in arr:
            if cls == "intra":
                b_intra += size
            else:
                b_inter += size
    assert total == 10**5
    assert b_intra / (b_intra + b_inter) == pytest.approx(0.8, abs=0.02)


def test_offered_load_accuracy():
    intra, inter = load_cdf("websearch"), load_cdf("websearch")
    hosts = _hosts()
    bw, load, duration = 10e9, 0.4, 2 * 10**9
    arr = poisson_arrival_times(load, bw, hosts, duration, RngStream("workload", 3), intra, inter)
    offered = sum(a[3] for a in arr) * 8 / (duration / 1e9 * 32 * bw)
    assert offered == pytest.approx(load, rel=0.05)


def test_endpoints_valid_and_classes_match_dcs():
    hosts = _hosts(8)
    dc = {h: i for i, d in enumerate(hosts) for h in d}
    arr = poisson_arrival_times(0.3, 10e9, hosts, 10**8, RngStream("workload", 4),
                                load_cdf("websearch"), load_cdf("alibaba_wan"), max_flows=5_000)
    assert all(t1 <= t2 for (t1, *_), (t2, *_) in zip(arr, arr[1:]))
    for _, s, d, size, cls in arr:
        assert s != d and size >= 1
        assert (dc[s] != dc[d]) == (cls == "inter")


def test_sparse_load_gives_sparse_arrivals():
    arr = poisson_arrival_times(1e-6, 10e9, _hosts(), 10**6, RngStream("workload", 1),
                                load_cdf("websearch"), load_cdf("websearch"))
    assert len(arr) <= 1


def test_load_must_be_positive():
    with pytest.raises(ValueError):
        poisson_arrival_times(0, 10e9, _hosts(), 10**6, RngStream("w", 1),
                              load_cdf("websearch"), load_cdf("websearch"))


# ---------------------------------------------------------------- incast and permutation

def test_incast_four_and_four(k8):
    flows = gen_incast(k8, 4, 4, GiB)
    dst = flows[0].dst
    assert len(flows) == 8 and all(f.dst == dst and f.start == 0 and f.size == GiB for f in flows)
    assert [f.cls for f in flows] == ["intra"] * 4 + ["inter"] * 4
    assert len({f.src for f in flows}) == 8
    for f in flows:
        assert k8.is_inter(f.src, f.dst) == (f.cls == "inter")


def test_pure_intra_incast(k8):
    flows = gen_incast(k8, 8, 0, GiB)
    assert len(flows) == 8 and all(f.cls == "intra" for f in flows)


def test_empty_incast(k8):
    assert gen_incast(k8, 0, 0, GiB) == []


def test_incast_too_large_rejected():
    small = build_two_dc_fattree(k=4, border_links=1)
    with pytest.raises(ConfigError):
        gen_incast(small, 16, 0, 1)


def test_derangement_of_four_has_no_fixed_points():
    items = list(range(4))
    for seed in range(50):
        perm = random_derangement(items, RngStream("perm", seed))
        assert sorted(perm) == items
        assert all(a != b for a, b in zip(items, perm))


def test_permutation_about_half_cross_dc(k8):
    fractions = []
    for seed in range(20):
        flows = gen_permutation(k8, 1000, RngStream("workload", seed))
        assert len(flows) == 256
        assert sorted(f.dst for f in flows) == sorted(k8.servers)
        assert all(f.src != f.dst for f in flows)
        fractions.append(sum(f.cls == "inter" for f in flows) / 256)
    # a uniform image of a server lies in the other DC with probability 128/255
    assert np.mean(fractions) == pytest.approx(128 / 255, abs=0.03)


def test_permutation_fixed_seed_is_reproducible(k8):
    a = gen_permutation(k8, 1000, RngStream("workload", 9))
    b = gen_permutation(k8, 1000, RngStream("workload", 9))
    assert [(f.src, f.dst) for f in a] == [(f.src, f.dst) for f in b]


def test_permutation_with_exact_cross_fraction(k8):
    flows = gen_permutation(k8, 1000, RngStream("workload", 2), fraction_cross_dc=0.25)
    assert sum(f.cls == "inter" for f in flows) == 2 * 32
    assert all(f.src != f.dst for f in flows)


# ---------------------------------------------------------------- allreduce

def test_hundred_iterations_give_hundred_epochs(k8):
    flows = gen_allreduce_bursts(k8, 70 * MiB, 500 * MiB, 100, 2, 10**6, RngStream("w", 1))
    starts = sorted({f.start for f in flows})
    assert len(starts) == 100
    assert all(b - a == 10**6 for a, b in zip(starts, starts[1:]))


def test_single_group_fixed_burst(k8):
    flows = gen_allreduce_bursts(k8, 70 * MiB, 70 * MiB, 3, 1, 10**6, RngStream("w", 1))
    assert len(flows) == 6
    for it in range(3):
        pair = [f for f in flows if f.start == it * 10**6]
        assert len(pair) == 2 and all(f.size == 70 * MiB for f in pair)
        assert pair[0].src == pair[1].dst and pair[0].dst == pair[1].src
        assert all(f.cls == "inter" for f in pair)


def test_burst_sizes_uniform_mean(k8):
    flows = gen_allreduce_bursts(k8, 70 * MiB, 500 * MiB, 1000, 1, 10**6, RngStream("w", 2))
    per_iter = [f.size for f in flows[::2]]
    assert np.mean(per_iter) == pytest.approx(285 * MiB, rel=0.05)


def test_allreduce_needs_an_iteration(k8):
    with pytest.raises(ValueError):
        gen_allreduce_bursts(k8, 1, 2, 0, 1, 1, RngStream("w", 1))
