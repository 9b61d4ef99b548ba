#include <doctest.h>

#include <sstream>

#include "qnet/distill.hpp"
#include "qnet/error.hpp"
#include "support.hpp"

using namespace qnet;

namespace {

// mpmath, 50 digits (tests/oracles/key_formulas.py)
constexpr double kH2_002 = 0.14144054254182064515;
constexpr double kH2_011 = 0.49991595816452799564;
constexpr double kEp = 0.029881729664600291515;
constexpr double kNfReal = 664761.06666735175951;
constexpr double kDelta = 5256.5217697569319786;
constexpr double kN00 = 989486.95646048613604;
constexpr double kNph = 30513.043539513863957;
constexpr double kEpTagged = 0.030837236752127275096;
constexpr double kNfTagged = 651560.68693201646625;

bool rel_close(double x, double ref, double tol = 1e-9) { return std::abs(x - ref) <= tol * std::abs(ref); }

UserStreams simulate_pair_link(double duration_s, std::uint64_t seed, double e_pol)
{
    const NetworkPlan plan = plan_network(2, 1);
    StationConfig st;
    st.polarization_error = e_pol;
    SourceConfig src;
    src.pair_rate_hz = 2e5;
    src.heralding_efficiency = 0.5;
    const auto raw = simulate_network(plan, src, test::uniform_stations(2, st), duration_s, seed);
    UserStreams streams;
    for (const auto& [u, s] : raw)
        streams[u] = merge_tags(s, calibration_for(st), u);
    return streams;
}

}  // namespace

TEST_CASE("binary entropy")
{
    CHECK(rel_close(binary_entropy(0.02), kH2_002, 1e-12));
    CHECK(rel_close(binary_entropy(0.11), kH2_011, 1e-12));
    CHECK(binary_entropy(0.0) == 0.0);
    CHECK(binary_entropy(1.0) == 0.0);
    CHECK(binary_entropy(0.5) == doctest::Approx(1.0));
    CHECK_THROWS_AS(binary_entropy(-0.1), Error);
    CHECK_THROWS_AS(binary_entropy(1.1), Error);
}

TEST_CASE("phase error bound and simple key length match the oracle")
{
    const PhaseErrorBound ep = phase_error_upper(0.02, 1e6, 1.0, 1e-5);
    CHECK_FALSE(ep.clamped);
    CHECK(rel_close(ep.value, kEp));
    CHECK(rel_close(key_length_real(1e6, 0.02, ep.value, 1.0), kNfReal));
    CHECK(secure_key_length(1e6, 0.02, ep.value, 1.0) == 664761);
}

TEST_CASE("phase error bound edge cases")
{
    CHECK(phase_error_upper(0.3, 100, 2.0, 1e-5).value == 0.5);
    CHECK(phase_error_upper(0.3, 100, 2.0, 1e-5).clamped);
    CHECK_THROWS_AS(phase_error_upper(0.02, 0, 1.0, 1e-5), Error);
    CHECK_THROWS_AS(phase_error_upper(0.02, 10, 0.5, 1e-5), Error);
    CHECK_THROWS_AS(phase_error_upper(0.02, 10, 1.0, 0.0), Error);
    // larger sifted length tightens the bound toward alpha * e_b
    CHECK(phase_error_upper(0.02, 1e9, 1.0, 1e-5).value < phase_error_upper(0.02, 1e6, 1.0, 1e-5).value);
    CHECK(phase_error_upper(0.02, 1e14, 1.5, 1e-5).value == doctest::Approx(0.03).epsilon(1e-3));
}

TEST_CASE("secure key length clamps at zero")
{
    CHECK(secure_key_length(1000, 0.11, 0.5, 1.0) == 0);
    CHECK(secure_key_length(1e6, 0.0, 0.0, 1.0) == 1000000);
    CHECK(asymptotic_key_length(1e6, 0.02, 1.0, 1.0) == static_cast<std::int64_t>(1e6 * (1 - 2 * kH2_002)));
    CHECK(asymptotic_key_length(1e6, 0.12, 1.0, 1.0) == 0);
}

TEST_CASE("azuma deviation and tagged key match the oracle")
{
    CHECK(rel_close(azuma_deviation(1e6, 1e-6), kDelta));
    CHECK(azuma_deviation(0, 1e-6) == 0.0);
    CHECK_THROWS_AS(azuma_deviation(10, 0.0), Error);

    PeakCounts p;
    p.n_mid = 1'000'000;
    const TaggedKey k = secure_key_length_tagged(p, 20'000, 1.0, 1e-6, 1.0);
    CHECK(rel_close(k.delta, kDelta));
    CHECK(rel_close(k.n00_lower, kN00));
    CHECK(rel_close(k.n_ph_upper, kNph));
    CHECK(rel_close(k.e_p_u, kEpTagged));
    CHECK(k.n_f == static_cast<std::int64_t>(kNfTagged));
    CHECK_FALSE(k.clamped);
}

TEST_CASE("tagged key shrinks with accidental counts")
{
    PeakCounts clean;
    clean.n_mid = 100'000;
    PeakCounts noisy = clean;
    noisy.n_2d_minus = 500;
    noisy.n_2d_plus = 500;
    const auto a = secure_key_length_tagged(clean, 2000, 1.0, 5e-6, 1.0);
    const auto b = secure_key_length_tagged(noisy, 2000, 1.0, 5e-6, 1.0);
    CHECK(b.n_f < a.n_f);
    CHECK(b.n00_lower < a.n00_lower);

    PeakCounts tiny;
    tiny.n_mid = 10;
    CHECK(secure_key_length_tagged(tiny, 0, 1.0, 5e-6, 1.0).clamped);
    CHECK(secure_key_length_tagged(PeakCounts{}, 0, 1.0, 5e-6, 1.0).n_f == 0);
}

TEST_CASE("basis bias inversion matches the oracle")
{
    auto b = basis_bias_from_fractions(0.25, 0.5, 0.25);
    CHECK(b.p_z_a == doctest::Approx(0.5));
    CHECK(b.p_z_b == doctest::Approx(0.5));
    CHECK(b.alpha == doctest::Approx(1.0));

    b = basis_bias_from_fractions(0.3, 0.5, 0.2);
    CHECK(b.p_z_a == doctest::Approx(0.6));
    CHECK(b.p_z_b == doctest::Approx(0.5));
    CHECK(b.alpha == doctest::Approx(1.5));

    b = basis_bias_from_fractions(0.21, 0.58, 0.21);
    CHECK(b.p_z_a == doctest::Approx(0.7));
    CHECK(b.p_z_b == doctest::Approx(0.7));
    CHECK(b.alpha == doctest::Approx(49.0 / 9.0));

    // un-normalised counts and the mirrored branch give the same alpha
    CHECK(basis_bias_from_fractions(30, 50, 20).alpha == doctest::Approx(1.5));
    CHECK(basis_bias_from_fractions(0.2, 0.5, 0.3).alpha == doctest::Approx(1.5));
}

TEST_CASE("basis bias forward model round trip")
{
    for (double a : {0.2, 0.35, 0.5, 0.56, 0.64}) {
        for (double bz : {0.3, 0.5, 0.6}) {
            const double l = a * (1 - bz);
            const double r = (1 - a) * bz;
            const double m = a * bz + (1 - a) * (1 - bz);
            const BasisBias bias = basis_bias_from_fractions(l, m, r, 1e-9);
            const double expected = std::max(a * bz, (1 - a) * (1 - bz)) / std::min(a * bz, (1 - a) * (1 - bz));
            CHECK(bias.alpha == doctest::Approx(expected).epsilon(1e-6));
        }
    }
}

TEST_CASE("degenerate peak ratios")
{
    try {
        (void)basis_bias_from_fractions(0.4, 0.2, 0.4);
        FAIL("expected Degenerate");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Degenerate);
    }
    CHECK_THROWS_AS(basis_bias_from_fractions(0, 0, 0), Error);

    PeakCounts p;
    p.n_left = 400;
    p.n_mid = 200;
    p.n_right = 400;
    const BasisBias b = estimate_basis_bias(p);
    CHECK(b.degenerate);
    CHECK(b.alpha == doctest::Approx(kWorstCaseAlpha));
    CHECK(kWorstCaseAlpha == doctest::Approx(3.1605).epsilon(1e-4));

    // statistical fluctuation just past the boundary is tolerated
    PeakCounts edge;
    edge.n_left = 2510;
    edge.n_mid = 4990;
    edge.n_right = 2500;
    const BasisBias e = estimate_basis_bias(edge);
    CHECK_FALSE(e.degenerate);
    CHECK(e.alpha == doctest::Approx(1.0).epsilon(0.05));
    CHECK_THROWS_AS(estimate_basis_bias(PeakCounts{}), Error);
}

TEST_CASE("sifting compares private detector ids")
{
    CoincidenceSet c;
    c.pairs = {{0, 1}, {1, 2}, {3, 0}};
    const std::vector<std::uint8_t> da{0, 1, 1, 0};
    const std::vector<std::uint8_t> db{1, 0, 1};
    const SiftedKey k = sift(c, da, db);
    CHECK(k.bits_a == std::vector<std::uint8_t>{0, 1, 0});
    CHECK(k.bits_b == std::vector<std::uint8_t>{0, 1, 1});
    CHECK(k.n_err == 1);
    CHECK(k.qber() == doctest::Approx(1.0 / 3.0));

    CoincidenceSet bad;
    bad.pairs = {{0, 7}};
    try {
        (void)sift(bad, da, db);
        FAIL("expected IndexMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::IndexMismatch);
    }
    CHECK(sift(CoincidenceSet{}, da, db).qber() == 0.0);
}

TEST_CASE("sampled QBER estimate")
{
    SiftedKey k;
    for (int i = 0; i < 100'000; ++i) {
        k.bits_a.push_back(static_cast<std::uint8_t>(i & 1));
        k.bits_b.push_back(static_cast<std::uint8_t>((i % 25 == 0) ? !(i & 1) : (i & 1)));
    }
    k.n_err = 4000;
    const QberSample s = estimate_qber_sampled(k, 0.1, 7);
    CHECK(s.sample_size + s.remaining == k.size());
    CHECK(std::abs(static_cast<double>(s.sample_size) - 1e4) < 4 * std::sqrt(9e3));
    CHECK(std::abs(s.estimate - 0.04) < 4 * std::sqrt(0.04 * 0.96 / 1e4));
    CHECK(estimate_qber_sampled(k, 0.1, 7).errors == s.errors);
    CHECK(estimate_qber_sampled(k, 1.0, 7).estimate == doctest::Approx(0.04));
    CHECK_THROWS_AS(estimate_qber_sampled(k, 0.0, 1), Error);
}

TEST_CASE("security parameters validate")
{
    SecurityParams p;
    CHECK_NOTHROW(p.validate());
    p.f = 0.9;
    CHECK_THROWS_AS(p.validate(), Error);
    p = SecurityParams{};
    p.xi_ph = 0;
    CHECK_THROWS_AS(p.validate(), Error);
}

TEST_CASE("two-user pipeline recovers the polarization error")
{
    const UserStreams streams = simulate_pair_link(4.0, 31, 0.02);
    const NetworkPlan plan = plan_network(2, 1);
    PipelineOptions opt;
    opt.duration_s = 4.0;
    opt.tau_c_ps = 400;
    const auto reports = blockwise_report(streams, plan, 2.0, SecurityParams{}, opt);
    REQUIRE(reports.size() == 2);
    for (const auto& r : reports) {
        CHECK(r.calibrated);
        CHECK(r.link == UserPair{0, 1});
        REQUIRE(r.resources.size() == 1);
        CHECK(std::llabs(r.resources[0].offset_ps) <= 20);
        CHECK(r.block_length_s == doctest::Approx(2.0));
        const double e = combined_flip_probability(0.02, 0.02);
        const double n = static_cast<double>(r.n_s);
        CHECK(n > 1000);
        // dark-count accidentals raise the QBER slightly above the flip rate
        CHECK(r.e_b > e - 3 * std::sqrt(e * (1 - e) / n));
        CHECK(r.e_b < e + 0.02);
        CHECK(r.n_f_asymptotic > 0);
        CHECK(r.n_f_tagged <= r.n_f_simple);
    }
    const auto totals = summarize(reports);
    REQUIRE(totals.size() == 1);
    CHECK(totals[0].blocks == 2);
    CHECK(totals[0].n_s == reports[0].n_s + reports[1].n_s);
    CHECK(totals[0].duration_s == doctest::Approx(4.0));

    std::ostringstream csv;
    write_key_report_csv(csv, reports);
    CHECK(csv.str().rfind("link,block_index,n_s,e_b,alpha,e_p_u,n_f_simple,n_f_tagged,rate_bps,e_b_0,e_b_1\n", 0) ==
          0);
    std::ostringstream table;
    write_totals_table(table, totals);
    CHECK(table.str().find("0-1") != std::string::npos);
}

TEST_CASE("window optimisation never does worse than a fixed window")
{
    const UserStreams streams = simulate_pair_link(2.0, 32, 0.02);
    const NetworkPlan plan = plan_network(2, 1);
    PipelineOptions fixed;
    fixed.duration_s = 2.0;
    fixed.tau_c_ps = 200;
    PipelineOptions opt;
    opt.duration_s = 2.0;
    opt.tau_candidates = {100, 200, 400};
    const auto a = blockwise_report(streams, plan, 2.0, SecurityParams{}, fixed);
    const auto b = blockwise_report(streams, plan, 2.0, SecurityParams{}, opt);
    CHECK(b[0].n_f_simple >= a[0].n_f_simple);
}

TEST_CASE("uncorrelated streams are reported uncalibrated")
{
    UserStreams streams;
    for (UserId u : {0, 1}) {
        MergeResult m;
        m.merged.user = u;
        m.merged.timestamps = test::random_sorted(3000, 1'000'000'000'000, 50 + u);
        m.outcomes.detector.assign(3000, 0);
        streams[u] = m;
    }
    PipelineOptions opt;
    opt.duration_s = 1.0;
    const auto reports = blockwise_report(streams, plan_network(2, 1), 1.0, SecurityParams{}, opt);
    REQUIRE(reports.size() == 1);
    CHECK_FALSE(reports[0].calibrated);
    CHECK(reports[0].n_f_simple == 0);
    CHECK(reports[0].resources.empty());
    CHECK_THROWS_AS(blockwise_report(streams, plan_network(2, 1), 0.0, SecurityParams{}, opt), Error);
    CHECK_THROWS_AS(blockwise_report(streams, plan_network(4, 1), 1.0, SecurityParams{}, opt), Error);
}

TEST_CASE("thread count does not change reports")
{
    const NetworkPlan plan = plan_network(4, 1);
    StationConfig st;
    SourceConfig src;
    src.pair_rate_hz = 2e5;
    src.heralding_efficiency = 0.5;
    const auto raw = simulate_network(plan, src, test::uniform_stations(4, st), 1.0, 77);
    UserStreams streams;
    for (const auto& [u, s] : raw)
        streams[u] = merge_tags(s, calibration_for(st), u);
    PipelineOptions one;
    one.duration_s = 1.0;
    one.tau_c_ps = 300;
    PipelineOptions three = one;
    three.threads = 3;
    const auto a = blockwise_report(streams, plan, 1.0, SecurityParams{}, one);
    const auto b = blockwise_report(streams, plan, 1.0, SecurityParams{}, three);
    REQUIRE(a.size() == 6);
    REQUIRE(b.size() == 6);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].link == b[i].link);
        CHECK(a[i].n_s == b[i].n_s);
        CHECK(a[i].n_err == b[i].n_err);
        CHECK(a[i].n_f_simple == b[i].n_f_simple);
    }
}
