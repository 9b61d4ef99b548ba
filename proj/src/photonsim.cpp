#include "qnet/photonsim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <thread>

#include "qnet/error.hpp"
#include "qnet/rng.hpp"

namespace qnet {

static_assert(sizeof(DetectionRecord) == 16);

namespace {

constexpr double kSpeedOfLight = 299'792'458.0;

void require(bool ok, const std::string& what)
{
    if (!ok)
        throw Error(ErrorCode::InvalidConfig, what);
}

bool probability(double p) noexcept { return p >= 0.0 && p <= 1.0; }

double db_to_transmission(double db) noexcept { return std::pow(10.0, -db / 10.0); }

/// Precomputed per-recipient constants for one side of a routing.
struct Arm {
    UserId user;
    double cumulative;          ///< routing CDF upper edge
    double transmission;        ///< excluding detector efficiency
    double base_delay_ps;       ///< fiber + multiplexer channel delay
    double pam_delta_ps;
    double transmit_fraction;
    double flip;
    std::array<double, 2> efficiency;
    std::array<double, 2> sigma;
    std::array<double, 2> det_delay;
};

std::vector<Arm> build_arms(const Routing& routing, const std::vector<Recipient>& side, int channel,
                            const SourceConfig& source, const StationMap& stations, const SimulationOptions& opt)
{
    std::vector<Arm> arms;
    double cumulative = 0.0;
    const auto channel_delay = opt.channel_delay_ps.find(channel);
    for (const Recipient& rec : side) {
        const StationConfig& st = stations.at(rec.user);
        cumulative += rec.fraction;
        Arm arm{};
        arm.user = rec.user;
        arm.cumulative = cumulative;
        arm.transmission = arm_transmission(routing, rec, source, st, opt);
        arm.base_delay_ps = propagation_delay_ps(st.fiber_length_m, opt.group_index) +
                            (channel_delay != opt.channel_delay_ps.end() ? channel_delay->second : 0.0);
        arm.pam_delta_ps = st.pam_delta_ps;
        arm.transmit_fraction = st.pam_transmit_fraction;
        arm.flip = st.polarization_error;
        for (int d = 0; d < 2; ++d) {
            arm.efficiency[d] = st.detectors[d].efficiency;
            arm.sigma[d] = st.detectors[d].jitter_sigma_ps();
            arm.det_delay[d] = st.detectors[d].delay_ps;
        }
        arms.push_back(arm);
    }
    // guard against rounding in the last CDF edge
    if (!arms.empty())
        arms.back().cumulative = 1.0;
    return arms;
}

using UserBuffers = std::map<UserId, TagStream>;

/// Emits the detections caused by one channel pair. Every photon draws its
/// random numbers from its own counter-keyed stream, so a change in loss only
/// moves survival thresholds and never reshuffles other draws.
void simulate_resource(std::size_t r, const Routing& routing, const SourceConfig& source,
                       const StationMap& stations, double duration_s, std::uint64_t seed,
                       const SimulationOptions& opt, UserBuffers& out)
{
    const std::array<std::vector<Arm>, 2> sides{
        build_arms(routing, routing.plus_recipients, routing.pair.plus.value(), source, stations, opt),
        build_arms(routing, routing.minus_recipients, routing.pair.minus.value(), source, stations, opt)};

    const auto emissions = generate_pair_events(source.pair_rate_hz, source.pump_scale, duration_s,
                                                derive_seed(seed, StreamPurpose::Emission, {r}));

    for (std::size_t e = 0; e < emissions.size(); ++e) {
        // Phi+ correlations: both photons read the same outcome when measured
        // in the same basis, independent outcomes otherwise.
        const std::uint64_t shared = derive_seed(seed, StreamPurpose::Photon, {r, e, 2});
        const std::array<std::uint8_t, 2> source_bit{static_cast<std::uint8_t>(shared & 1U),
                                                     static_cast<std::uint8_t>((shared >> 1) & 1U)};

        for (std::uint64_t side = 0; side < 2; ++side) {
            SplitMix64 rng(derive_seed(seed, StreamPurpose::Photon, {r, e, side}));
            const double u_route = rng.uniform();
            const double u_survive = rng.uniform();
            const double u_basis = rng.uniform();
            const double u_flip = rng.uniform();

            const auto& arms = sides[side];
            const Arm& arm = *std::find_if(arms.begin(), arms.end(),
                                           [u_route](const Arm& a) { return u_route < a.cumulative; });

            const Basis basis = u_basis < arm.transmit_fraction ? Basis::Z : Basis::X;
            std::uint8_t bit = source_bit[static_cast<std::size_t>(basis)];
            if (u_flip < arm.flip)
                bit ^= 1U;

            if (u_survive >= arm.transmission * arm.efficiency[bit])
                continue;

            double t = static_cast<double>(emissions[e]) + arm.base_delay_ps + arm.det_delay[bit];
            if (basis == Basis::X)
                t += arm.pam_delta_ps;
            if (arm.sigma[bit] > 0.0)
                t += arm.sigma[bit] * rng.normal();
            const auto ts = static_cast<std::int64_t>(std::llround(t));
            if (ts < 0)
                continue;

            DetectionRecord rec;
            rec.timestamp_ps = ts;
            rec.detector_id = bit;
            if (opt.record_truth) {
                rec.truth_event = static_cast<std::uint32_t>(e);
                rec.truth_resource = static_cast<std::int16_t>(r);
                rec.truth_basis = basis;
            }
            out[arm.user].push_back(rec);
        }
    }
}

void append_darks(UserId user, const StationConfig& st, double duration_s, std::uint64_t seed, bool record_truth,
                  TagStream& out)
{
    const double duration_ps = duration_s * 1e12;
    for (std::uint8_t d = 0; d < 2; ++d) {
        const double rate = st.detectors[d].dark_rate_hz;
        if (rate <= 0.0)
            continue;
        std::mt19937_64 gen(derive_seed(seed, StreamPurpose::Dark, {static_cast<std::uint64_t>(user), d}));
        std::poisson_distribution<std::int64_t> count_dist(rate * duration_s);
        std::uniform_real_distribution<double> when(0.0, duration_ps);
        const std::int64_t n = count_dist(gen);
        for (std::int64_t i = 0; i < n; ++i) {
            DetectionRecord rec;
            rec.timestamp_ps = static_cast<std::int64_t>(when(gen));
            rec.detector_id = d;
            if (record_truth)
                rec.truth_resource = Truth::kDark;
            out.push_back(rec);
        }
    }
}

void enforce_dead_time(const StationConfig& st, TagStream& stream)
{
    const std::array<double, 2> dead{st.detectors[0].dead_time_ps, st.detectors[1].dead_time_ps};
    if (dead[0] <= 0.0 && dead[1] <= 0.0)
        return;
    std::array<std::int64_t, 2> last{};
    std::array<bool, 2> seen{};
    auto keep = stream.begin();
    for (auto it = stream.begin(); it != stream.end(); ++it) {
        const std::uint8_t d = it->detector_id;
        if (seen[d] && static_cast<double>(it->timestamp_ps - last[d]) < dead[d])
            continue;
        seen[d] = true;
        last[d] = it->timestamp_ps;
        *keep++ = *it;
    }
    stream.erase(keep, stream.end());
}

bool record_less(const DetectionRecord& a, const DetectionRecord& b) noexcept
{
    if (a.timestamp_ps != b.timestamp_ps)
        return a.timestamp_ps < b.timestamp_ps;
    if (a.detector_id != b.detector_id)
        return a.detector_id < b.detector_id;
    if (a.truth_resource != b.truth_resource)
        return a.truth_resource < b.truth_resource;
    return a.truth_event < b.truth_event;
}

}  // namespace

void SourceConfig::validate() const
{
    require(pair_rate_hz >= 0.0, "pair_rate_hz must be non-negative");
    require(pump_scale >= 0.0, "pump_scale must be non-negative");
    require(probability(heralding_efficiency), "heralding efficiency must lie in [0,1]");
}

void DetectorConfig::validate() const
{
    require(probability(efficiency), "detector efficiency must lie in [0,1]");
    require(jitter_fwhm_ps >= 0.0, "detector jitter must be non-negative");
    require(dark_rate_hz >= 0.0, "dark count rate must be non-negative");
    require(dead_time_ps >= 0.0, "dead time must be non-negative");
}

double StationConfig::transmission() const noexcept { return db_to_transmission(fiber_loss_db); }

void StationConfig::validate() const
{
    const std::string who = "user " + std::to_string(user_id) + ": ";
    require(fiber_loss_db >= 0.0, who + "fiber loss must be non-negative");
    require(fiber_length_m >= 0.0, who + "fiber length must be non-negative");
    require(pam_delta_ps >= 0.0, who + "PAM delay must be non-negative");
    require(pam_transmit_fraction > 0.0 && pam_transmit_fraction < 1.0,
            who + "PAM transmit fraction must lie strictly between 0 and 1");
    require(polarization_error >= 0.0 && polarization_error <= 0.5, who + "polarization error must lie in [0,0.5]");
    for (const DetectorConfig& d : detectors)
        d.validate();
}

double combined_flip_probability(double e_a, double e_b) noexcept { return e_a + e_b - 2.0 * e_a * e_b; }

double propagation_delay_ps(double fiber_length_m, double group_index) noexcept
{
    return fiber_length_m * group_index / kSpeedOfLight * 1e12;
}

double arm_transmission(const Routing& routing, const Recipient&, const SourceConfig& source,
                        const StationConfig& station, const SimulationOptions& options)
{
    double t = source.heralding_efficiency * station.transmission();
    if (auto it = options.routing_loss_db.find(routing.pair.plus.value()); it != options.routing_loss_db.end())
        t *= db_to_transmission(it->second);
    return t;
}

std::vector<std::int64_t> generate_pair_events(double pair_rate_hz, double pump_scale, double duration_s,
                                               std::uint64_t seed)
{
    if (!(duration_s > 0.0))
        throw Error(ErrorCode::InvalidConfig, "duration must be positive");
    std::vector<std::int64_t> times;
    const double rate_per_ps = pair_rate_hz * pump_scale * 1e-12;
    if (rate_per_ps <= 0.0)
        return times;
    const double end_ps = duration_s * 1e12;
    times.reserve(static_cast<std::size_t>(rate_per_ps * end_ps * 1.01) + 16);

    std::mt19937_64 gen(seed);
    std::exponential_distribution<double> gap(rate_per_ps);
    for (double t = gap(gen); t < end_ps; t += gap(gen))
        times.push_back(static_cast<std::int64_t>(t));
    return times;
}

std::map<UserId, TagStream> simulate_network(const NetworkPlan& plan, const SourceConfig& source,
                                             const StationMap& stations, double duration_s, std::uint64_t seed,
                                             const SimulationOptions& options)
{
    source.validate();
    if (!(duration_s > 0.0))
        throw Error(ErrorCode::InvalidConfig, "duration must be positive");
    for (UserId u = 0; u < plan.n_users; ++u) {
        auto it = stations.find(u);
        if (it == stations.end())
            throw Error(ErrorCode::InvalidConfig, "no station configured for user " + std::to_string(u));
        it->second.validate();
    }
    if (plan.routings.size() > static_cast<std::size_t>(std::numeric_limits<std::int16_t>::max()))
        throw Error(ErrorCode::InvalidConfig, "too many channel pairs for truth tagging");

    const std::size_t n_res = plan.routings.size();
    std::vector<UserBuffers> partial(n_res);
    const unsigned threads = std::max(1U, std::min<unsigned>(options.threads, static_cast<unsigned>(n_res)));
    if (threads <= 1) {
        for (std::size_t r = 0; r < n_res; ++r)
            simulate_resource(r, plan.routings[r], source, stations, duration_s, seed, options, partial[r]);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < threads; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t r = w; r < n_res; r += threads)
                    simulate_resource(r, plan.routings[r], source, stations, duration_s, seed, options, partial[r]);
            });
    }

    std::map<UserId, TagStream> out;
    for (UserId u = 0; u < plan.n_users; ++u) {
        TagStream& stream = out[u];
        std::size_t total = 0;
        for (const auto& buffers : partial)
            if (auto it = buffers.find(u); it != buffers.end())
                total += it->second.size();
        stream.reserve(total);
        for (auto& buffers : partial) {
            if (auto it = buffers.find(u); it != buffers.end()) {
                stream.insert(stream.end(), it->second.begin(), it->second.end());
                TagStream().swap(it->second);
            }
        }
        const StationConfig& st = stations.at(u);
        append_darks(u, st, duration_s, seed, options.record_truth, stream);
        std::sort(stream.begin(), stream.end(), record_less);
        enforce_dead_time(st, stream);
    }
    return out;
}

Calibration calibration_for(const StationConfig& station) noexcept
{
    return {std::llround(station.detectors[0].delay_ps), std::llround(station.detectors[1].delay_ps)};
}

MergeResult merge_tags(const TagStream& stream, const Calibration& calibration, UserId user)
{
    for (std::size_t i = 1; i < stream.size(); ++i)
        if (stream[i].timestamp_ps < stream[i - 1].timestamp_ps)
            throw Error(ErrorCode::UnsortedInput, "tag stream not time-ordered at record " + std::to_string(i));

    const std::size_t n = stream.size();
    std::vector<std::int64_t> corrected(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& rec = stream[i];
        if (rec.detector_id > 1)
            throw Error(ErrorCode::BadRecord, "detector id " + std::to_string(rec.detector_id) + " out of range");
        corrected[i] = rec.timestamp_ps - calibration[rec.detector_id];
    }

    std::vector<std::size_t> order;
    if (!std::is_sorted(corrected.begin(), corrected.end())) {
        order.resize(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return corrected[a] < corrected[b]; });
    }
    auto at = [&](std::size_t i) { return order.empty() ? i : order[i]; };

    const bool with_truth = std::any_of(stream.begin(), stream.end(),
                                        [](const DetectionRecord& r) { return r.truth_resource != Truth::kUnknown; });

    MergeResult result;
    result.merged.user = user;
    result.merged.timestamps.resize(n);
    result.outcomes.detector.resize(n);
    if (with_truth)
        result.outcomes.truth.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t src = at(i);
        result.merged.timestamps[i] = corrected[src];
        result.outcomes.detector[i] = stream[src].detector_id;
        if (with_truth)
            result.outcomes.truth[i] = stream[src].truth();
    }
    return result;
}

}  // namespace qnet
