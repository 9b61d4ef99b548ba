#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "qnet/topology.hpp"

namespace qnet {

struct SourceConfig {
    double pair_rate_hz = 1e5;          ///< pairs/s per channel pair at pump_scale 1
    double pump_scale = 1.0;
    double heralding_efficiency = 0.2;

    double effective_rate_hz() const noexcept { return pair_rate_hz * pump_scale; }
    void validate() const;
};

struct DetectorConfig {
    double efficiency = 0.8;
    double jitter_fwhm_ps = 70.0;
    double dark_rate_hz = 1000.0;
    double dead_time_ps = 0.0;
    /// Fixed electronic/optical delay of this detector. Users subtract it
    /// (their calibration) before sharing tags.
    double delay_ps = 0.0;

    double jitter_sigma_ps() const noexcept { return jitter_fwhm_ps / 2.355; }
    void validate() const;
};

struct StationConfig {
    UserId user_id = 0;
    double fiber_loss_db = 0.0;
    double fiber_length_m = 0.0;
    double pam_delta_ps = 3700.0;
    double pam_transmit_fraction = 0.5;   ///< short path, Z basis
    double polarization_error = 0.02;
    std::array<DetectorConfig, 2> detectors{};

    double transmission() const noexcept;
    void validate() const;
};

using StationMap = std::map<UserId, StationConfig>;

/// Bit flip probability seen on a link when each station flips its own
/// same-basis outcome independently.
double combined_flip_probability(double e_a, double e_b) noexcept;

double propagation_delay_ps(double fiber_length_m, double group_index) noexcept;

enum class Basis : std::uint8_t { Z = 0, X = 1 };

/// Simulation-only provenance of a detection. Shared output never carries it.
struct Truth {
    static constexpr std::int16_t kDark = -1;
    static constexpr std::int16_t kUnknown = -2;

    std::uint32_t event = 0;                 ///< emission index within the resource
    std::int16_t resource = kUnknown;        ///< routing index, kDark for dark counts
    Basis basis = Basis::Z;

    bool is_dark() const noexcept { return resource == kDark; }
    bool known() const noexcept { return resource >= 0; }
    bool partners(const Truth& other) const noexcept
    {
        return known() && resource == other.resource && event == other.event;
    }
};

/// Flat 16-byte layout: a 60 s eight-user run produces tens of millions.
struct DetectionRecord {
    std::int64_t timestamp_ps = 0;
    std::uint32_t truth_event = 0;
    std::int16_t truth_resource = Truth::kUnknown;
    Basis truth_basis = Basis::Z;
    std::uint8_t detector_id = 0;

    Truth truth() const noexcept { return {truth_event, truth_resource, truth_basis}; }
};

using TagStream = std::vector<DetectionRecord>;

/// Timestamps only. The type has no detector field, which is what makes it
/// safe to hand to the other party.
struct MergedTagStream {
    UserId user = 0;
    std::vector<std::int64_t> timestamps;

    std::size_t size() const noexcept { return timestamps.size(); }
    bool empty() const noexcept { return timestamps.empty(); }
};

/// A user's own measurement outcomes, index-aligned with their merged stream.
struct PrivateOutcomes {
    std::vector<std::uint8_t> detector;
    std::vector<Truth> truth;   ///< empty unless ground truth was recorded

    std::size_t size() const noexcept { return detector.size(); }
};

struct MergeResult {
    MergedTagStream merged;
    PrivateOutcomes outcomes;
};

using Calibration = std::array<std::int64_t, 2>;

struct SimulationOptions {
    double group_index = 1.468;
    /// Extra delay of an individual DWDM channel inside the multiplexer, keyed
    /// by signed channel index. Separates the peaks of multi-resource links.
    std::map<int, double> channel_delay_ps;
    /// Extra insertion loss per routing, keyed by the routing's plus index.
    std::map<int, double> routing_loss_db;
    unsigned threads = 1;
    bool record_truth = true;
};

/// Homogeneous Poisson arrivals, integer picoseconds, sorted.
std::vector<std::int64_t> generate_pair_events(double pair_rate_hz, double pump_scale, double duration_s,
                                               std::uint64_t seed);

/// Simulates every channel pair of the plan and returns each user's raw,
/// time-ordered detections (with detector ids and truth).
std::map<UserId, TagStream> simulate_network(const NetworkPlan& plan, const SourceConfig& source,
                                             const StationMap& stations, double duration_s, std::uint64_t seed,
                                             const SimulationOptions& options = {});

/// Transmission from the source to a recipient's PAM, excluding the
/// beamsplitter share and the detector.
double arm_transmission(const Routing& routing, const Recipient& recipient, const SourceConfig& source,
                        const StationConfig& station, const SimulationOptions& options);

/// Subtracts per-detector calibration, strips detector ids into the private
/// half and re-sorts. Throws Error(UnsortedInput) for unsorted input.
MergeResult merge_tags(const TagStream& stream, const Calibration& calibration, UserId user = 0);

Calibration calibration_for(const StationConfig& station) noexcept;

}  // namespace qnet
