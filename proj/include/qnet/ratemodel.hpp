#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "qnet/photonsim.hpp"
#include "qnet/topology.hpp"

namespace qnet {

struct RateOptions {
    double f = 1.0;
    /// Same routing-loss and channel options the simulator uses.
    SimulationOptions sim;
};

/// Detection rate of one detector: every channel routed to the user plus darks.
double singles_rate(const NetworkPlan& plan, const SourceConfig& source, const StationMap& stations, UserId user,
                    int detector, const RateOptions& options = {});
double singles_rate(const NetworkPlan& plan, const SourceConfig& source, const StationMap& stations, UserId user,
                    const RateOptions& options = {});

/// One shared channel pair of a link; its coincidences form their own peaks.
struct ResourcePrediction {
    std::size_t routing = 0;
    double true_coinc_hz = 0.0;    ///< all basis combinations, no window cut
    double mid_true_hz = 0.0;      ///< same basis, inside the window
    double mid_error_hz = 0.0;     ///< share of mid_true_hz with unequal bits
    double left_true_hz = 0.0;     ///< a in Z, b in X, inside the window
    double right_true_hz = 0.0;    ///< a in X, b in Z, inside the window
    double accidental_hz = 0.0;    ///< per window
    double e_b_pred = 0.5;
    double sifted_hz = 0.0;
    double key_rate_bps = 0.0;
};

struct LinkPrediction {
    UserPair link{0, 0};
    double singles_a_hz = 0.0;
    double singles_b_hz = 0.0;
    double true_coinc_hz = 0.0;
    double mid_true_hz = 0.0;
    double left_true_hz = 0.0;
    double right_true_hz = 0.0;
    double accidental_hz = 0.0;       ///< summed over the link's middle windows
    double window_efficiency = 0.0;   ///< mid_true / same-basis true coincidences
    double e_b_pred = 0.5;
    double sifted_hz = 0.0;
    double key_rate_bps = 0.0;
    double alpha = 1.0;
    std::vector<ResourcePrediction> resources;
};

/// Fraction of a Gaussian of width sigma (mean mu) inside [-tau/2, tau/2).
double gaussian_window_fraction(double tau_ps, double sigma_ps, double mu_ps = 0.0);

/// Throws Error(InvalidPlan) when the link is not in the plan.
LinkPrediction predict_link(const NetworkPlan& plan, const SourceConfig& source, const StationMap& stations,
                            UserPair link, double tau_c_ps, const RateOptions& options = {});

struct SweepPoint {
    double x = 0.0;
    UserPair link{0, 0};
    double key_rate_bps = 0.0;
    double e_b = 0.5;
    double accidental_hz = 0.0;
};

struct PumpSweep {
    std::vector<double> scales;
    std::vector<SweepPoint> points;     ///< every link at every scale
    std::vector<double> total_key_bps;  ///< one per scale
};

/// Throws Error(DomainError) unless scales are positive and ascending.
PumpSweep sweep_pump(const NetworkPlan& plan, const SourceConfig& source, const StationMap& stations,
                     const std::vector<double>& pump_scales, double tau_c_ps, const RateOptions& options = {});

/// A single interior maximum: strictly rising up to it, falling after it
/// (flat stretches allowed only at zero).
bool is_unimodal(const std::vector<double>& values);

bool is_non_increasing(const std::vector<double>& values);

enum class SubnetRule { Two, SqrtN };

const char* family_label(SubnetRule rule) noexcept;
int subnets_for(int n, SubnetRule rule);

struct ScalabilityParams {
    double pair_rate_hz = 1e5;
    double heralding_efficiency = 0.2;
    double detector_efficiency = 0.7;
    double jitter_fwhm_ps = 100.0;
    double dark_rate_hz = 100.0;
    double polarization_error = 0.01;
    double pam_delta_ps = 3700.0;
    double pam_transmit_fraction = 0.5;
    double f = 1.0;
    std::optional<double> tau_c_ps;   ///< unset: 3x the combined jitter FWHM

    double window_ps() const noexcept;
};

struct ScalabilityCurve {
    int n = 0;
    int k = 0;
    SubnetRule rule = SubnetRule::Two;
    UserPair link{0, 1};
    std::vector<SweepPoint> points;   ///< x = total link loss in dB
};

/// Identical stations; each end of the observed non-premium link (0,1)
/// carries half the link loss.
std::vector<ScalabilityCurve> sweep_scalability(const std::vector<int>& n_list, SubnetRule rule,
                                                const std::vector<double>& loss_db, const ScalabilityParams& params);

/// x,link,key_rate_bps,e_b,accidental_hz; a "total" row per scale.
void write_pump_sweep_csv(std::ostream& os, const PumpSweep& sweep);

/// family,n,k,x,link,key_rate_bps,e_b,accidental_hz
void write_scalability_csv(std::ostream& os, const std::vector<ScalabilityCurve>& curves);

}  // namespace qnet
