#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace qnet {

/// Counts of t_a - t_b over consecutive bins. Bin j covers
/// [lower_edge() + j*w, lower_edge() + (j+1)*w).
struct CorrelationHistogram {
    std::int64_t bin_width_ps = 0;
    std::int64_t center_offset_ps = 0;
    std::int64_t half_range_ps = 0;
    std::vector<std::uint64_t> counts;

    std::int64_t lower_edge() const noexcept { return center_offset_ps - half_range_ps; }
    std::int64_t upper_edge() const noexcept
    {
        return lower_edge() + bin_width_ps * static_cast<std::int64_t>(counts.size());
    }
    std::int64_t bin_start(std::size_t j) const noexcept
    {
        return lower_edge() + bin_width_ps * static_cast<std::int64_t>(j);
    }
    double bin_center(std::size_t j) const noexcept
    {
        return static_cast<double>(bin_start(j)) + 0.5 * static_cast<double>(bin_width_ps);
    }
    std::optional<std::size_t> bin_of(std::int64_t offset_ps) const noexcept;
    std::uint64_t total() const noexcept;
    std::size_t argmax() const noexcept;
};

/// Two-pointer sweep over sorted streams; O(N * W) with W the mean number of
/// b tags inside the range of one a tag.
CorrelationHistogram cross_correlation(std::span<const std::int64_t> a, std::span<const std::int64_t> b,
                                       std::int64_t bin_width_ps, std::int64_t half_range_ps,
                                       std::int64_t center_offset_ps = 0);

void write_histogram_csv(std::ostream& os, const CorrelationHistogram& hist);

struct CalibrationOptions {
    std::int64_t delta_ps = 3700;
    std::int64_t search_range_ps = 100'000'000;
    std::int64_t coarse_bin_ps = 500;
    std::int64_t fine_bin_ps = 10;
    std::int64_t margin_ps = 1000;
    std::int64_t peak_halfwidth_ps = 350;
    std::size_t max_tags = 1'000'000;
    double min_peak_counts = 20.0;
    double significance = 8.0;
};

/// Offset (t_a - t_b) that centers the same-basis peak at zero.
/// Throws Error(NoPeakFound) when no significant peak exists.
std::int64_t calibrate_offset(std::span<const std::int64_t> a, std::span<const std::int64_t> b,
                              const CalibrationOptions& options = {});

/// Finds n_peaks independent same-basis peaks (one per shared resource),
/// returned in ascending order.
std::vector<std::int64_t> calibrate_offsets(std::span<const std::int64_t> a, std::span<const std::int64_t> b,
                                            std::size_t n_peaks, const CalibrationOptions& options = {});

struct CoincidenceSet {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::int64_t tau_c_ps = 0;
    std::int64_t offset_ps = 0;   ///< total offset the window was centred on

    std::size_t size() const noexcept { return pairs.size(); }
    bool empty() const noexcept { return pairs.empty(); }
};

/// Greedy earliest-first one-to-one matching of tags with
/// -tau/2 <= t_a - t_b - (offset + peak_offset) < tau/2.
CoincidenceSet find_coincidences(std::span<const std::int64_t> a, std::span<const std::int64_t> b,
                                 std::int64_t offset_ps, std::int64_t tau_c_ps, std::int64_t peak_offset_ps = 0);

/// Reference O(N^2) matcher with the same semantics, for tests.
CoincidenceSet find_coincidences_brute_force(std::span<const std::int64_t> a, std::span<const std::int64_t> b,
                                             std::int64_t offset_ps, std::int64_t tau_c_ps,
                                             std::int64_t peak_offset_ps = 0);

struct PeakCounts {
    std::uint64_t n_left = 0;       ///< -delta
    std::uint64_t n_mid = 0;
    std::uint64_t n_right = 0;      ///< +delta
    std::uint64_t n_2d_minus = 0;   ///< -2 delta
    std::uint64_t n_2d_plus = 0;    ///< +2 delta

    PeakCounts& operator+=(const PeakCounts& o) noexcept;
    bool operator==(const PeakCounts&) const = default;
};

PeakCounts peak_counts(std::span<const std::int64_t> a, std::span<const std::int64_t> b, std::int64_t offset_ps,
                       std::int64_t tau_c_ps, std::int64_t delta_ps);

/// Middle-peak coincidences plus all five peak counts at one window width.
struct WindowTrial {
    CoincidenceSet mid;
    PeakCounts peaks;
};

WindowTrial evaluate_window(std::span<const std::int64_t> a, std::span<const std::int64_t> b, std::int64_t offset_ps,
                            std::int64_t tau_c_ps, std::int64_t delta_ps);

using WindowScorer = std::function<std::int64_t(const WindowTrial&)>;

struct WindowChoice {
    std::int64_t tau_c_ps = 0;
    std::int64_t key_length = 0;
};

/// Picks the candidate with the largest score; ties go to the smaller window.
/// Throws Error(DomainError) on an empty or non-positive candidate list.
WindowChoice optimize_window(std::span<const std::int64_t> a, std::span<const std::int64_t> b, std::int64_t offset_ps,
                             std::int64_t delta_ps, std::span<const std::int64_t> candidates,
                             const WindowScorer& scorer);

}  // namespace qnet
