#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "qnet/correlate.hpp"
#include "qnet/photonsim.hpp"
#include "qnet/topology.hpp"

namespace qnet {

/// Phase/bit error ratio bound for PAM splits at the edge of a 56 +- 8 %
/// transmission tolerance: (0.64 / 0.36)^2.
inline constexpr double kWorstCaseAlpha = (0.64 * 0.64) / (0.36 * 0.36);

enum class AlphaMode { Measured, Nominal, WorstCase };

struct SecurityParams {
    double xi_ph = 1e-5;
    double epsilon = 5e-6;
    double f = 1.0;
    AlphaMode alpha_mode = AlphaMode::Measured;
    double worst_case_alpha = kWorstCaseAlpha;

    void validate() const;
};

struct SiftedKey {
    std::vector<std::uint8_t> bits_a;
    std::vector<std::uint8_t> bits_b;
    std::uint64_t n_err = 0;

    std::size_t size() const noexcept { return bits_a.size(); }
    double qber() const noexcept
    {
        return bits_a.empty() ? 0.0 : static_cast<double>(n_err) / static_cast<double>(bits_a.size());
    }
};

/// Bits are each side's own detector ids at the matched tags.
/// Throws Error(IndexMismatch) if a coincidence points past either array.
SiftedKey sift(const CoincidenceSet& coincidences, std::span<const std::uint8_t> detectors_a,
               std::span<const std::uint8_t> detectors_b);
SiftedKey sift(const CoincidenceSet& coincidences, const PrivateOutcomes& a, const PrivateOutcomes& b);

struct QberSample {
    std::size_t sample_size = 0;
    std::uint64_t errors = 0;
    double estimate = 0.0;
    std::size_t remaining = 0;   ///< bits left for the key after disclosure
};

/// Discloses a random subset (each bit with probability fraction) and
/// estimates the QBER from it.
QberSample estimate_qber_sampled(const SiftedKey& key, double fraction, std::uint64_t seed);

struct BasisBias {
    double p_z_a = 0.5;
    double p_z_b = 0.5;
    double alpha = 1.0;
    bool degenerate = false;
};

/// Inverts L = a(1-b), M = ab + (1-a)(1-b), R = (1-a)b for normalised
/// fractions. When the discriminant is below -tolerance throws
/// Error(Degenerate); otherwise small negative values are clamped to zero.
BasisBias basis_bias_from_fractions(double left, double mid, double right, double tolerance = 1e-12);

/// Count-based front end: tolerance is three standard deviations of the
/// discriminant under multinomial noise. Degenerate counts return alpha =
/// worst_case_alpha with the flag set. Throws Error(DomainError) on zero counts.
BasisBias estimate_basis_bias(const PeakCounts& peaks, double worst_case_alpha = kWorstCaseAlpha);

double binary_entropy(double x);

struct PhaseErrorBound {
    double value = 0.0;
    bool clamped = false;
};

PhaseErrorBound phase_error_upper(double e_b, double n_s, double alpha, double xi_ph);

/// n_s (1 - H2(e_p_u) - f H2(e_b)) before flooring and clamping.
double key_length_real(double n_s, double e_b, double e_p_u, double f);
std::int64_t secure_key_length(double n_s, double e_b, double e_p_u, double f);

/// Infinite-key counterpart with e_p = alpha * e_b.
std::int64_t asymptotic_key_length(double n_s, double e_b, double alpha, double f);

double azuma_deviation(double n, double epsilon);

struct TaggedKey {
    double delta = 0.0;
    double n00_lower = 0.0;
    double n_ph_upper = 0.0;
    double e_p_u = 0.5;
    std::int64_t n_f = 0;
    bool clamped = false;
};

TaggedKey secure_key_length_tagged(const PeakCounts& peaks, std::uint64_t n_err, double alpha, double epsilon,
                                   double f);

struct LinkStats {
    std::uint64_t n_s = 0;
    std::uint64_t n_err = 0;
    double e_b = 0.0;
    PeakCounts peaks;
    BasisBias bias;
    double alpha = 1.0;   ///< value used for the bounds, per AlphaMode
};

/// detectors_a/b are each side's private outcomes, index-aligned with the
/// streams the trial was computed on.
LinkStats link_stats(const WindowTrial& trial, std::span<const std::uint8_t> detectors_a,
                     std::span<const std::uint8_t> detectors_b, const SecurityParams& params);

struct ResourceReport {
    std::int64_t offset_ps = 0;
    std::int64_t tau_c_ps = 0;
    LinkStats stats;
    PhaseErrorBound e_p_u;
    std::int64_t n_f_simple = 0;
    TaggedKey tagged;
    std::int64_t n_f_asymptotic = 0;
};

/// Full finite-key evaluation of one window trial.
ResourceReport evaluate_resource(const WindowTrial& trial, std::span<const std::uint8_t> detectors_a,
                                 std::span<const std::uint8_t> detectors_b, const SecurityParams& params);

struct SecureKeyReport {
    UserPair link{0, 0};
    std::size_t block_index = 0;
    double block_start_s = 0.0;
    double block_length_s = 0.0;
    bool calibrated = true;
    std::uint64_t n_s = 0;
    std::uint64_t n_err = 0;
    double e_b = 0.0;
    double alpha = 1.0;      ///< n_s-weighted over resources
    double e_p_u = 0.5;      ///< n_s-weighted over resources
    std::int64_t n_f_simple = 0;
    std::int64_t n_f_tagged = 0;
    std::int64_t n_f_asymptotic = 0;
    bool clamped_at_zero = true;
    std::vector<ResourceReport> resources;   ///< ascending offset

    double rate_bps() const noexcept { return block_length_s > 0.0 ? n_f_simple / block_length_s : 0.0; }
};

struct PipelineOptions {
    std::optional<std::int64_t> tau_c_ps;   ///< unset: optimise over tau_candidates
    std::vector<std::int64_t> tau_candidates{60, 80, 100, 130, 160, 200, 260, 340, 440, 600};
    std::int64_t delta_ps = 3700;
    CalibrationOptions calibration;
    double duration_s = 0.0;                ///< 0: inferred from the latest tag
    unsigned threads = 1;
};

using UserStreams = std::map<UserId, MergeResult>;

/// Calibrates every link of the plan once over the whole record, then
/// evaluates consecutive blocks of block_s seconds. Reports are ordered by
/// link, then block.
std::vector<SecureKeyReport> blockwise_report(const UserStreams& streams, const NetworkPlan& plan, double block_s,
                                              const SecurityParams& params, const PipelineOptions& options = {});

struct LinkTotals {
    UserPair link{0, 0};
    std::size_t blocks = 0;
    double duration_s = 0.0;
    std::uint64_t n_s = 0;
    std::uint64_t n_err = 0;
    std::int64_t n_f_simple = 0;
    std::int64_t n_f_tagged = 0;
    std::int64_t n_f_asymptotic = 0;
    std::vector<double> resource_qber;

    double e_b() const noexcept { return n_s ? static_cast<double>(n_err) / static_cast<double>(n_s) : 0.0; }
    double rate_bps() const noexcept { return duration_s > 0.0 ? n_f_simple / duration_s : 0.0; }
};

std::vector<LinkTotals> summarize(const std::vector<SecureKeyReport>& reports);

/// link,block_index,n_s,e_b,alpha,e_p_u,n_f_simple,n_f_tagged,rate_bps,e_b_0,e_b_1
void write_key_report_csv(std::ostream& os, const std::vector<SecureKeyReport>& reports);

/// Per-link totals as a fixed-width table, one row per link and a final sum.
void write_totals_table(std::ostream& os, const std::vector<LinkTotals>& totals);

}  // namespace qnet
