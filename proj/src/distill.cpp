#include "qnet/distill.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <thread>

#include "qnet/error.hpp"
#include "qnet/rng.hpp"

namespace qnet {

namespace {

using Span = std::span<const std::int64_t>;
using Bits = std::span<const std::uint8_t>;

double fraction_product_ratio(double a, double b)
{
    const double same_z = a * b;
    const double same_x = (1.0 - a) * (1.0 - b);
    const double lo = std::min(same_z, same_x);
    const double hi = std::max(same_z, same_x);
    if (lo <= 0.0)
        return std::numeric_limits<double>::infinity();
    return hi / lo;
}

std::size_t first_at_or_after(Span s, std::int64_t t)
{
    return static_cast<std::size_t>(std::lower_bound(s.begin(), s.end(), t) - s.begin());
}

double alpha_for(const BasisBias& bias, const SecurityParams& params)
{
    switch (params.alpha_mode) {
    case AlphaMode::Nominal:
        return 1.0;
    case AlphaMode::WorstCase:
        return params.worst_case_alpha;
    case AlphaMode::Measured:
        break;
    }
    return std::isfinite(bias.alpha) ? bias.alpha : params.worst_case_alpha;
}

struct LinkJob {
    UserPair link;
    std::size_t n_resources;
};

std::vector<SecureKeyReport> process_link(const LinkJob& job, const UserStreams& streams, double duration_s,
                                          double block_s, const SecurityParams& params, const PipelineOptions& opt)
{
    const MergeResult& ua = streams.at(job.link.first);
    const MergeResult& ub = streams.at(job.link.second);
    const Span ta(ua.merged.timestamps);
    const Span tb(ub.merged.timestamps);
    const Bits da(ua.outcomes.detector);
    const Bits db(ub.outcomes.detector);

    std::vector<std::int64_t> offsets;
    bool calibrated = true;
    try {
        offsets = calibrate_offsets(ta, tb, job.n_resources, opt.calibration);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::NoPeakFound)
            throw;
        calibrated = false;
    }

    const auto n_blocks = static_cast<std::size_t>(std::max(1.0, std::ceil(duration_s / block_s - 1e-9)));
    const std::int64_t tau_max =
        opt.tau_c_ps ? *opt.tau_c_ps
                     : *std::max_element(opt.tau_candidates.begin(), opt.tau_candidates.end());
    const std::int64_t reach = 2 * opt.delta_ps + tau_max;

    std::vector<SecureKeyReport> out;
    for (std::size_t blk = 0; blk < n_blocks; ++blk) {
        SecureKeyReport rep;
        rep.link = job.link;
        rep.block_index = blk;
        rep.block_start_s = static_cast<double>(blk) * block_s;
        rep.block_length_s = std::min(block_s, duration_s - rep.block_start_s);
        rep.calibrated = calibrated;

        const auto t0 = static_cast<std::int64_t>(std::llround(rep.block_start_s * 1e12));
        const auto t1 = static_cast<std::int64_t>(std::llround((rep.block_start_s + rep.block_length_s) * 1e12));
        const std::size_t a0 = first_at_or_after(ta, t0);
        const std::size_t a1 = blk + 1 == n_blocks ? ta.size() : first_at_or_after(ta, t1);
        const Span sa = ta.subspan(a0, a1 - a0);
        const Bits ba = da.subspan(a0, a1 - a0);

        double weighted_alpha = 0.0;
        double weighted_ep = 0.0;
        for (std::int64_t off : offsets) {
            const std::size_t b0 = first_at_or_after(tb, t0 - off - reach);
            const std::size_t b1 = std::max(b0, first_at_or_after(tb, t1 - off + reach));
            const Span sb = tb.subspan(b0, b1 - b0);
            const Bits bb = db.subspan(b0, b1 - b0);

            std::int64_t tau = 0;
            if (opt.tau_c_ps) {
                tau = *opt.tau_c_ps;
            } else {
                WindowChoice choice = optimize_window(sa, sb, off, opt.delta_ps, opt.tau_candidates,
                                                      [&](const WindowTrial& trial) {
                                                          return evaluate_resource(trial, ba, bb, params).n_f_simple;
                                                      });
                if (choice.key_length == 0)
                    choice = optimize_window(sa, sb, off, opt.delta_ps, opt.tau_candidates,
                                             [&](const WindowTrial& trial) {
                                                 return evaluate_resource(trial, ba, bb, params).n_f_asymptotic;
                                             });
                tau = choice.tau_c_ps;
            }
            ResourceReport res = evaluate_resource(evaluate_window(sa, sb, off, tau, opt.delta_ps), ba, bb, params);
            res.offset_ps = off;
            res.tau_c_ps = tau;

            rep.n_s += res.stats.n_s;
            rep.n_err += res.stats.n_err;
            rep.n_f_simple += res.n_f_simple;
            rep.n_f_tagged += res.tagged.n_f;
            rep.n_f_asymptotic += res.n_f_asymptotic;
            weighted_alpha += res.stats.alpha * static_cast<double>(res.stats.n_s);
            weighted_ep += res.e_p_u.value * static_cast<double>(res.stats.n_s);
            rep.resources.push_back(std::move(res));
        }
        if (rep.n_s > 0) {
            rep.e_b = static_cast<double>(rep.n_err) / static_cast<double>(rep.n_s);
            rep.alpha = weighted_alpha / static_cast<double>(rep.n_s);
            rep.e_p_u = weighted_ep / static_cast<double>(rep.n_s);
        }
        rep.clamped_at_zero = rep.n_f_simple <= 0;
        out.push_back(std::move(rep));
    }
    return out;
}

}  // namespace

void SecurityParams::validate() const
{
    auto open_unit = [](double x) { return x > 0.0 && x < 1.0; };
    if (!open_unit(xi_ph) || !open_unit(epsilon))
        throw Error(ErrorCode::InvalidConfig, "failure probabilities must lie in (0,1)");
    if (!(f >= 1.0))
        throw Error(ErrorCode::InvalidConfig, "error-correction inefficiency must be at least 1");
    if (!(worst_case_alpha >= 1.0))
        throw Error(ErrorCode::InvalidConfig, "worst-case alpha must be at least 1");
}

SiftedKey sift(const CoincidenceSet& coincidences, Bits detectors_a, Bits detectors_b)
{
    SiftedKey key;
    key.bits_a.reserve(coincidences.size());
    key.bits_b.reserve(coincidences.size());
    for (const auto& [i, j] : coincidences.pairs) {
        if (i >= detectors_a.size() || j >= detectors_b.size())
            throw Error(ErrorCode::IndexMismatch, "coincidence index outside the private outcome records");
        key.bits_a.push_back(detectors_a[i]);
        key.bits_b.push_back(detectors_b[j]);
        key.n_err += detectors_a[i] != detectors_b[j];
    }
    return key;
}

SiftedKey sift(const CoincidenceSet& coincidences, const PrivateOutcomes& a, const PrivateOutcomes& b)
{
    return sift(coincidences, Bits(a.detector), Bits(b.detector));
}

QberSample estimate_qber_sampled(const SiftedKey& key, double fraction, std::uint64_t seed)
{
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw Error(ErrorCode::DomainError, "sample fraction must lie in (0,1]");
    SplitMix64 rng(derive_seed(seed, StreamPurpose::Sample, {key.size()}));
    QberSample s;
    for (std::size_t i = 0; i < key.size(); ++i) {
        if (rng.uniform() < fraction) {
            ++s.sample_size;
            s.errors += key.bits_a[i] != key.bits_b[i];
        }
    }
    s.remaining = key.size() - s.sample_size;
    s.estimate = s.sample_size ? static_cast<double>(s.errors) / static_cast<double>(s.sample_size) : 0.0;
    return s;
}

BasisBias basis_bias_from_fractions(double left, double mid, double right, double tolerance)
{
    const double total = left + mid + right;
    if (!(total > 0.0) || left < 0.0 || mid < 0.0 || right < 0.0)
        throw Error(ErrorCode::DomainError, "peak fractions must be non-negative with a positive sum");
    const double l = left / total;
    const double r = right / total;
    const double d = l - r;
    double disc = (1.0 + d) * (1.0 + d) - 4.0 * l;
    if (disc < -tolerance)
        throw Error(ErrorCode::Degenerate, "peak ratios admit no real basis probabilities");
    disc = std::max(disc, 0.0);

    BasisBias bias;
    bias.p_z_a = std::clamp(0.5 * (1.0 + d + std::sqrt(disc)), 0.0, 1.0);
    bias.p_z_b = std::clamp(bias.p_z_a - d, 0.0, 1.0);
    bias.alpha = fraction_product_ratio(bias.p_z_a, bias.p_z_b);
    return bias;
}

BasisBias estimate_basis_bias(const PeakCounts& peaks, double worst_case_alpha)
{
    const auto n = static_cast<double>(peaks.n_left + peaks.n_mid + peaks.n_right);
    if (n <= 0.0)
        throw Error(ErrorCode::DomainError, "no coincidences in the three central peaks");
    const double l = static_cast<double>(peaks.n_left) / n;
    const double r = static_cast<double>(peaks.n_right) / n;
    const double d = l - r;
    // delta-method variance of D = (1 + L - R)^2 - 4L under multinomial counts
    const double g_l = 2.0 * (1.0 + d) - 4.0;
    const double g_r = -2.0 * (1.0 + d);
    const double var = (g_l * g_l * l * (1.0 - l) + g_r * g_r * r * (1.0 - r) - 2.0 * g_l * g_r * l * r) / n;
    const double tolerance = 3.0 * std::sqrt(std::max(var, 0.0)) + 1e-12;
    try {
        return basis_bias_from_fractions(static_cast<double>(peaks.n_left), static_cast<double>(peaks.n_mid),
                                         static_cast<double>(peaks.n_right), tolerance);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::Degenerate)
            throw;
        BasisBias bias;
        bias.alpha = worst_case_alpha;
        bias.degenerate = true;
        return bias;
    }
}

double binary_entropy(double x)
{
    if (!(x >= 0.0 && x <= 1.0))
        throw Error(ErrorCode::DomainError, "binary entropy argument outside [0,1]");
    if (x == 0.0 || x == 1.0)
        return 0.0;
    return -x * std::log2(x) - (1.0 - x) * std::log2(1.0 - x);
}

PhaseErrorBound phase_error_upper(double e_b, double n_s, double alpha, double xi_ph)
{
    if (!(n_s > 0.0))
        throw Error(ErrorCode::DomainError, "phase error bound needs a positive sifted length");
    if (!(alpha >= 1.0) || !(xi_ph > 0.0 && xi_ph < 1.0) || !(e_b >= 0.0 && e_b <= 1.0))
        throw Error(ErrorCode::DomainError, "phase error bound arguments out of range");
    const double v = alpha * e_b + (1.0 + alpha) * std::sqrt((std::log(4.0) - 2.0 * std::log(xi_ph)) / n_s);
    if (v > 0.5)
        return {0.5, true};
    return {v, false};
}

double key_length_real(double n_s, double e_b, double e_p_u, double f)
{
    return n_s * (1.0 - binary_entropy(e_p_u) - f * binary_entropy(e_b));
}

std::int64_t secure_key_length(double n_s, double e_b, double e_p_u, double f)
{
    const double v = key_length_real(n_s, e_b, e_p_u, f);
    return v > 0.0 ? static_cast<std::int64_t>(std::floor(v)) : 0;
}

std::int64_t asymptotic_key_length(double n_s, double e_b, double alpha, double f)
{
    return secure_key_length(n_s, e_b, std::min(0.5, alpha * e_b), f);
}

double azuma_deviation(double n, double epsilon)
{
    if (!(n >= 0.0) || !(epsilon > 0.0 && epsilon <= 1.0))
        throw Error(ErrorCode::DomainError, "deviation term arguments out of range");
    return std::sqrt(2.0 * n * std::log(1.0 / epsilon));
}

TaggedKey secure_key_length_tagged(const PeakCounts& peaks, std::uint64_t n_err, double alpha, double epsilon,
                                   double f)
{
    TaggedKey k;
    const auto n_mid = static_cast<double>(peaks.n_mid);
    const auto n_2d = static_cast<double>(peaks.n_2d_minus + peaks.n_2d_plus);
    const double n = n_mid + n_2d;
    if (n <= 0.0 || peaks.n_mid == 0) {
        k.clamped = true;
        return k;
    }
    k.delta = azuma_deviation(n, epsilon);
    k.n00_lower = n_mid - n_2d - 2.0 * k.delta;
    k.n_ph_upper = alpha * static_cast<double>(n_err) + (1.0 + alpha) * k.delta;
    if (k.n00_lower <= 0.0) {
        k.clamped = true;
        return k;
    }
    k.e_p_u = std::min(0.5, k.n_ph_upper / k.n00_lower);
    const double e_b = static_cast<double>(n_err) / n_mid;
    const double v = k.n00_lower * (1.0 - binary_entropy(k.e_p_u)) - f * n_mid * binary_entropy(e_b);
    if (v > 0.0)
        k.n_f = static_cast<std::int64_t>(std::floor(v));
    else
        k.clamped = true;
    return k;
}

LinkStats link_stats(const WindowTrial& trial, Bits detectors_a, Bits detectors_b, const SecurityParams& params)
{
    LinkStats s;
    const SiftedKey key = sift(trial.mid, detectors_a, detectors_b);
    s.n_s = key.size();
    s.n_err = key.n_err;
    s.e_b = key.qber();
    s.peaks = trial.peaks;
    if (s.peaks.n_left + s.peaks.n_mid + s.peaks.n_right > 0)
        s.bias = estimate_basis_bias(s.peaks, params.worst_case_alpha);
    s.alpha = alpha_for(s.bias, params);
    return s;
}

ResourceReport evaluate_resource(const WindowTrial& trial, Bits detectors_a, Bits detectors_b,
                                 const SecurityParams& params)
{
    ResourceReport r;
    r.tau_c_ps = trial.mid.tau_c_ps;
    r.offset_ps = trial.mid.offset_ps;
    r.stats = link_stats(trial, detectors_a, detectors_b, params);
    if (r.stats.n_s == 0) {
        r.e_p_u = {0.5, true};
        r.tagged.clamped = true;
        return r;
    }
    const auto n_s = static_cast<double>(r.stats.n_s);
    r.e_p_u = phase_error_upper(r.stats.e_b, n_s, r.stats.alpha, params.xi_ph);
    r.n_f_simple = secure_key_length(n_s, r.stats.e_b, r.e_p_u.value, params.f);
    r.tagged = secure_key_length_tagged(r.stats.peaks, r.stats.n_err, r.stats.alpha, params.epsilon, params.f);
    r.n_f_asymptotic = asymptotic_key_length(n_s, r.stats.e_b, r.stats.alpha, params.f);
    return r;
}

std::vector<SecureKeyReport> blockwise_report(const UserStreams& streams, const NetworkPlan& plan, double block_s,
                                              const SecurityParams& params, const PipelineOptions& options)
{
    if (!(block_s > 0.0))
        throw Error(ErrorCode::DomainError, "block length must be positive");
    params.validate();
    if (!options.tau_c_ps && options.tau_candidates.empty())
        throw Error(ErrorCode::DomainError, "no coincidence window configured");
    for (UserId u = 0; u < plan.n_users; ++u)
        if (!streams.contains(u))
            throw Error(ErrorCode::InvalidConfig, "no tag stream for user " + std::to_string(u));

    double duration_s = options.duration_s;
    if (duration_s <= 0.0) {
        std::int64_t last = 0;
        for (const auto& [u, s] : streams)
            if (!s.merged.empty())
                last = std::max(last, s.merged.timestamps.back());
        duration_s = static_cast<double>(last + 1) * 1e-12;
    }

    std::vector<LinkJob> jobs;
    for (const auto& [link, resources] : plan.link_map)
        jobs.push_back({link, resources.size()});

    std::vector<std::vector<SecureKeyReport>> per_link(jobs.size());
    const unsigned threads = std::max(1U, std::min<unsigned>(options.threads, static_cast<unsigned>(jobs.size())));
    if (threads <= 1) {
        for (std::size_t i = 0; i < jobs.size(); ++i)
            per_link[i] = process_link(jobs[i], streams, duration_s, block_s, params, options);
    } else {
        std::vector<std::exception_ptr> errors(threads);
        {
            std::vector<std::jthread> pool;
            for (unsigned w = 0; w < threads; ++w)
                pool.emplace_back([&, w] {
                    try {
                        for (std::size_t i = w; i < jobs.size(); i += threads)
                            per_link[i] = process_link(jobs[i], streams, duration_s, block_s, params, options);
                    } catch (...) {
                        errors[w] = std::current_exception();
                    }
                });
        }
        for (const auto& e : errors)
            if (e)
                std::rethrow_exception(e);
    }

    std::vector<SecureKeyReport> out;
    for (auto& v : per_link)
        for (auto& r : v)
            out.push_back(std::move(r));
    return out;
}

std::vector<LinkTotals> summarize(const std::vector<SecureKeyReport>& reports)
{
    std::map<UserPair, LinkTotals> by_link;
    std::map<UserPair, std::vector<std::pair<std::uint64_t, std::uint64_t>>> resource_counts;
    for (const auto& r : reports) {
        LinkTotals& t = by_link[r.link];
        t.link = r.link;
        ++t.blocks;
        t.duration_s += r.block_length_s;
        t.n_s += r.n_s;
        t.n_err += r.n_err;
        t.n_f_simple += r.n_f_simple;
        t.n_f_tagged += r.n_f_tagged;
        t.n_f_asymptotic += r.n_f_asymptotic;
        auto& rc = resource_counts[r.link];
        if (rc.size() < r.resources.size())
            rc.resize(r.resources.size());
        for (std::size_t i = 0; i < r.resources.size(); ++i) {
            rc[i].first += r.resources[i].stats.n_err;
            rc[i].second += r.resources[i].stats.n_s;
        }
    }
    std::vector<LinkTotals> out;
    for (auto& [link, t] : by_link) {
        for (const auto& [err, n] : resource_counts[link])
            t.resource_qber.push_back(n ? static_cast<double>(err) / static_cast<double>(n) : 0.0);
        out.push_back(std::move(t));
    }
    return out;
}

void write_key_report_csv(std::ostream& os, const std::vector<SecureKeyReport>& reports)
{
    os << "link,block_index,n_s,e_b,alpha,e_p_u,n_f_simple,n_f_tagged,rate_bps,e_b_0,e_b_1\n";
    os << std::setprecision(8);
    for (const auto& r : reports) {
        os << to_string(r.link) << ',' << r.block_index << ',' << r.n_s << ',' << r.e_b << ',' << r.alpha << ','
           << r.e_p_u << ',' << r.n_f_simple << ',' << r.n_f_tagged << ',' << r.rate_bps();
        if (r.resources.size() >= 2)
            os << ',' << r.resources[0].stats.e_b << ',' << r.resources[1].stats.e_b;
        else
            os << ",,";
        os << '\n';
    }
}

void write_totals_table(std::ostream& os, const std::vector<LinkTotals>& totals)
{
    const auto flags = os.flags();
    os << std::left << std::setw(8) << "link" << std::right << std::setw(12) << "sifted" << std::setw(10)
       << "QBER %" << std::setw(14) << "key (finite)" << std::setw(14) << "key (tagged)" << std::setw(14)
       << "key (asympt)" << std::setw(12) << "rate bps" << "  QBER0/QBER1 %\n";
    LinkTotals sum;
    for (const auto& t : totals) {
        os << std::left << std::setw(8) << to_string(t.link) << std::right << std::setw(12) << t.n_s
           << std::setw(10) << std::fixed << std::setprecision(2) << 100.0 * t.e_b() << std::setw(14) << t.n_f_simple
           << std::setw(14) << t.n_f_tagged << std::setw(14) << t.n_f_asymptotic << std::setw(12)
           << std::setprecision(1) << t.rate_bps();
        if (t.resource_qber.size() >= 2)
            os << "  " << std::setprecision(2) << 100.0 * t.resource_qber[0] << '/' << 100.0 * t.resource_qber[1];
        os << '\n';
        sum.n_s += t.n_s;
        sum.n_err += t.n_err;
        sum.n_f_simple += t.n_f_simple;
        sum.n_f_tagged += t.n_f_tagged;
        sum.n_f_asymptotic += t.n_f_asymptotic;
        sum.duration_s = std::max(sum.duration_s, t.duration_s);
    }
    os << std::left << std::setw(8) << "total" << std::right << std::setw(12) << sum.n_s << std::setw(10)
       << std::setprecision(2) << 100.0 * sum.e_b() << std::setw(14) << sum.n_f_simple << std::setw(14)
       << sum.n_f_tagged << std::setw(14) << sum.n_f_asymptotic << std::setw(12) << std::setprecision(1)
       << sum.rate_bps() << '\n';
    os.flags(flags);
}

}  // namespace qnet
