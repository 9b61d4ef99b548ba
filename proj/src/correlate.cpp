#include "qnet/correlate.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

#include "qnet/error.hpp"

namespace qnet {

namespace {

using Span = std::span<const std::int64_t>;

void require_sorted(Span s, const char* name)
{
    if (!std::is_sorted(s.begin(), s.end()))
        throw Error(ErrorCode::UnsortedInput, std::string(name) + " stream is not time-ordered");
}

/// Prefix of a (at most max_tags) and the part of b that can pair with it
/// at offsets within +-reach.
std::pair<Span, Span> restrict_streams(Span a, Span b, std::size_t max_tags, std::int64_t reach)
{
    if (a.size() > max_tags)
        a = a.first(max_tags);
    if (a.empty())
        return {a, b.first(0)};
    const auto lo = std::lower_bound(b.begin(), b.end(), a.front() - reach);
    const auto hi = std::upper_bound(b.begin(), b.end(), a.back() + reach);
    return {a, Span(lo, hi)};
}

/// Mean offset of all pairs with t_a - t_b in [m - h, m + h), corrected for a
/// flat background of bg_per_ps.
double background_corrected_centroid(Span a, Span b, double m, std::int64_t h, double bg_per_ps)
{
    const auto lo = static_cast<std::int64_t>(std::floor(m)) - h;
    const auto hi = static_cast<std::int64_t>(std::floor(m)) + h;
    double sum = 0.0;
    double n = 0.0;
    std::size_t start = 0;
    for (std::int64_t ta : a) {
        // need lo <= ta - tb < hi, i.e. ta - hi < tb <= ta - lo
        while (start < b.size() && b[start] <= ta - hi)
            ++start;
        for (std::size_t j = start; j < b.size() && b[j] <= ta - lo; ++j) {
            sum += static_cast<double>(ta - b[j]);
            n += 1.0;
        }
    }
    if (n == 0.0)
        return m;
    const double window_center = 0.5 * static_cast<double>(lo + hi);
    const double bg = bg_per_ps * static_cast<double>(hi - lo);
    const double signal = n - bg;
    const double mean = sum / n;
    if (signal <= 0.0)
        return mean;
    return window_center + (mean - window_center) * n / signal;
}

struct PeakSearch {
    const CalibrationOptions& opt;
    Span a;
    Span b;
    CorrelationHistogram coarse;
    double coarse_mean = 0.0;
    std::vector<bool> masked;

    PeakSearch(Span a_in, Span b_in, const CalibrationOptions& options) : opt(options)
    {
        if (opt.coarse_bin_ps <= 0 || opt.fine_bin_ps <= 0)
            throw Error(ErrorCode::ZeroBinWidth, "calibration bin widths must be positive");
        require_sorted(a_in, "first");
        require_sorted(b_in, "second");
        std::tie(a, b) = restrict_streams(a_in, b_in, opt.max_tags, opt.search_range_ps + opt.coarse_bin_ps);
        coarse = cross_correlation(a, b, opt.coarse_bin_ps, opt.search_range_ps);
        coarse_mean = static_cast<double>(coarse.total()) / static_cast<double>(coarse.counts.size());
        masked.assign(coarse.counts.size(), false);
    }

    double bg_per_ps() const { return coarse_mean / static_cast<double>(opt.coarse_bin_ps); }

    bool significant(double count, double expected) const
    {
        return count - expected >= opt.significance * std::sqrt(std::max(expected, 1.0));
    }

    std::int64_t next_peak()
    {
        std::size_t best = coarse.counts.size();
        for (std::size_t j = 0; j < coarse.counts.size(); ++j)
            if (!masked[j] && (best == coarse.counts.size() || coarse.counts[j] > coarse.counts[best]))
                best = j;
        if (best == coarse.counts.size())
            throw Error(ErrorCode::NoPeakFound, "search range exhausted");
        const auto peak = static_cast<double>(coarse.counts[best]);
        if (peak < opt.min_peak_counts || !significant(peak, coarse_mean))
            throw Error(ErrorCode::NoPeakFound, "no significant coincidence peak (max " + std::to_string(peak) +
                                                    " counts over mean " + std::to_string(coarse_mean) + ")");

        const auto x0 = static_cast<std::int64_t>(std::llround(coarse.bin_center(best)));
        const std::int64_t h = opt.peak_halfwidth_ps;
        const std::int64_t d = opt.delta_ps;
        const auto fine = cross_correlation(a, b, opt.fine_bin_ps, 2 * d + opt.margin_ps + h, x0);

        // window sums over +-h, evaluated at every fine bin
        const auto half_bins = static_cast<std::size_t>(std::max<std::int64_t>(1, h / opt.fine_bin_ps));
        std::vector<std::uint64_t> prefix(fine.counts.size() + 1, 0);
        for (std::size_t j = 0; j < fine.counts.size(); ++j)
            prefix[j + 1] = prefix[j] + fine.counts[j];
        auto window = [&](double m) -> double {
            const double pos = (m - static_cast<double>(fine.lower_edge())) / static_cast<double>(fine.bin_width_ps);
            const auto c = static_cast<std::int64_t>(std::floor(pos));
            const auto lo = std::clamp<std::int64_t>(c - static_cast<std::int64_t>(half_bins), 0,
                                                     static_cast<std::int64_t>(fine.counts.size()));
            const auto hi = std::clamp<std::int64_t>(c + static_cast<std::int64_t>(half_bins), 0,
                                                     static_cast<std::int64_t>(fine.counts.size()));
            return static_cast<double>(prefix[static_cast<std::size_t>(hi)] - prefix[static_cast<std::size_t>(lo)]);
        };

        double x1 = static_cast<double>(x0);
        double best_sum = -1.0;
        for (std::size_t j = 0; j < fine.counts.size(); ++j) {
            const double m = fine.bin_center(j);
            if (std::abs(m - static_cast<double>(x0)) > static_cast<double>(opt.coarse_bin_ps + h))
                continue;
            const double s = window(m);
            if (s > best_sum) {
                best_sum = s;
                x1 = m;
            }
        }

        const double expected = bg_per_ps() * static_cast<double>(2 * half_bins * opt.fine_bin_ps);
        double middle = x1;
        for (double m : {x1, x1 - static_cast<double>(d), x1 + static_cast<double>(d)}) {
            if (significant(window(m), expected) && significant(window(m - static_cast<double>(d)), expected) &&
                significant(window(m + static_cast<double>(d)), expected)) {
                middle = m;
                break;
            }
        }

        double mu = middle;
        for (int iter = 0; iter < 3; ++iter)
            mu = background_corrected_centroid(a, b, mu, h, bg_per_ps());
        const auto offset = static_cast<std::int64_t>(std::llround(mu));

        const std::int64_t mask_reach = 2 * d + opt.margin_ps + opt.coarse_bin_ps;
        for (std::size_t j = 0; j < coarse.counts.size(); ++j)
            if (std::abs(coarse.bin_center(j) - static_cast<double>(offset)) <= static_cast<double>(mask_reach))
                masked[j] = true;
        return offset;
    }
};

}  // namespace

std::optional<std::size_t> CorrelationHistogram::bin_of(std::int64_t offset_ps) const noexcept
{
    if (bin_width_ps <= 0 || offset_ps < lower_edge() || offset_ps >= upper_edge())
        return std::nullopt;
    return static_cast<std::size_t>((offset_ps - lower_edge()) / bin_width_ps);
}

std::uint64_t CorrelationHistogram::total() const noexcept
{
    std::uint64_t t = 0;
    for (std::uint64_t c : counts)
        t += c;
    return t;
}

std::size_t CorrelationHistogram::argmax() const noexcept
{
    return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

CorrelationHistogram cross_correlation(Span a, Span b, std::int64_t bin_width_ps, std::int64_t half_range_ps,
                                       std::int64_t center_offset_ps)
{
    if (bin_width_ps <= 0)
        throw Error(ErrorCode::ZeroBinWidth, "bin width must be positive");
    if (half_range_ps < 0)
        throw Error(ErrorCode::DomainError, "histogram half range must be non-negative");
    require_sorted(a, "first");
    require_sorted(b, "second");

    CorrelationHistogram h;
    h.bin_width_ps = bin_width_ps;
    h.center_offset_ps = center_offset_ps;
    h.half_range_ps = half_range_ps;
    const std::int64_t nbins = std::max<std::int64_t>(1, (2 * half_range_ps + bin_width_ps - 1) / bin_width_ps);
    h.counts.assign(static_cast<std::size_t>(nbins), 0);

    const std::int64_t lo = h.lower_edge();
    const std::int64_t hi = h.upper_edge();
    std::size_t start = 0;
    for (std::int64_t ta : a) {
        while (start < b.size() && b[start] <= ta - hi)
            ++start;
        for (std::size_t j = start; j < b.size() && b[j] <= ta - lo; ++j)
            ++h.counts[static_cast<std::size_t>((ta - b[j] - lo) / bin_width_ps)];
    }
    return h;
}

void write_histogram_csv(std::ostream& os, const CorrelationHistogram& hist)
{
    os << "offset_ps,count\n";
    for (std::size_t j = 0; j < hist.counts.size(); ++j)
        os << hist.bin_center(j) << ',' << hist.counts[j] << '\n';
}

std::int64_t calibrate_offset(Span a, Span b, const CalibrationOptions& options)
{
    return calibrate_offsets(a, b, 1, options).front();
}

std::vector<std::int64_t> calibrate_offsets(Span a, Span b, std::size_t n_peaks, const CalibrationOptions& options)
{
    PeakSearch search(a, b, options);
    std::vector<std::int64_t> offsets;
    for (std::size_t i = 0; i < n_peaks; ++i)
        offsets.push_back(search.next_peak());
    std::sort(offsets.begin(), offsets.end());
    return offsets;
}

CoincidenceSet find_coincidences(Span a, Span b, std::int64_t offset_ps, std::int64_t tau_c_ps,
                                 std::int64_t peak_offset_ps)
{
    if (tau_c_ps <= 0)
        throw Error(ErrorCode::DomainError, "coincidence window must be positive");
    require_sorted(a, "first");
    require_sorted(b, "second");

    CoincidenceSet set;
    set.tau_c_ps = tau_c_ps;
    set.offset_ps = offset_ps + peak_offset_ps;
    const std::int64_t off = set.offset_ps;

    // b matches a iff 2(t_a - off) - tau < 2 t_b <= 2(t_a - off) + tau
    std::size_t lo = 0;
    std::size_t hi = 0;
    std::size_t next = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const std::int64_t x2 = 2 * (a[i] - off);
        while (lo < b.size() && 2 * b[lo] <= x2 - tau_c_ps)
            ++lo;
        if (hi < lo)
            hi = lo;
        while (hi < b.size() && 2 * b[hi] <= x2 + tau_c_ps)
            ++hi;
        next = std::max(next, lo);
        if (next < hi) {
            set.pairs.emplace_back(i, next);
            ++next;
        }
    }
    return set;
}

CoincidenceSet find_coincidences_brute_force(Span a, Span b, std::int64_t offset_ps, std::int64_t tau_c_ps,
                                             std::int64_t peak_offset_ps)
{
    CoincidenceSet set;
    set.tau_c_ps = tau_c_ps;
    set.offset_ps = offset_ps + peak_offset_ps;
    std::vector<bool> used(b.size(), false);
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < b.size(); ++j) {
            const std::int64_t d2 = 2 * (a[i] - b[j] - set.offset_ps);
            if (!used[j] && -tau_c_ps <= d2 && d2 < tau_c_ps) {
                used[j] = true;
                set.pairs.emplace_back(i, j);
                break;
            }
        }
    }
    return set;
}

PeakCounts& PeakCounts::operator+=(const PeakCounts& o) noexcept
{
    n_left += o.n_left;
    n_mid += o.n_mid;
    n_right += o.n_right;
    n_2d_minus += o.n_2d_minus;
    n_2d_plus += o.n_2d_plus;
    return *this;
}

WindowTrial evaluate_window(Span a, Span b, std::int64_t offset_ps, std::int64_t tau_c_ps, std::int64_t delta_ps)
{
    WindowTrial trial;
    trial.mid = find_coincidences(a, b, offset_ps, tau_c_ps, 0);
    auto count = [&](std::int64_t k) {
        return static_cast<std::uint64_t>(find_coincidences(a, b, offset_ps, tau_c_ps, k * delta_ps).size());
    };
    trial.peaks.n_mid = trial.mid.size();
    trial.peaks.n_left = count(-1);
    trial.peaks.n_right = count(1);
    trial.peaks.n_2d_minus = count(-2);
    trial.peaks.n_2d_plus = count(2);
    return trial;
}

PeakCounts peak_counts(Span a, Span b, std::int64_t offset_ps, std::int64_t tau_c_ps, std::int64_t delta_ps)
{
    return evaluate_window(a, b, offset_ps, tau_c_ps, delta_ps).peaks;
}

WindowChoice optimize_window(Span a, Span b, std::int64_t offset_ps, std::int64_t delta_ps,
                             std::span<const std::int64_t> candidates, const WindowScorer& scorer)
{
    if (candidates.empty())
        throw Error(ErrorCode::DomainError, "no candidate coincidence windows");
    std::vector<std::int64_t> sorted(candidates.begin(), candidates.end());
    std::sort(sorted.begin(), sorted.end());
    WindowChoice best{sorted.front(), -1};
    for (std::int64_t tau : sorted) {
        const std::int64_t score = scorer(evaluate_window(a, b, offset_ps, tau, delta_ps));
        if (score > best.key_length)
            best = {tau, score};
    }
    best.key_length = std::max<std::int64_t>(best.key_length, 0);
    return best;
}

}  // namespace qnet
