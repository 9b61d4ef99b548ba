#include "qnet/ratemodel.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "qnet/distill.hpp"
#include "qnet/error.hpp"

namespace qnet {

namespace {

double basis_ratio(double p_a, double p_b)
{
    const double z = p_a * p_b;
    const double x = (1.0 - p_a) * (1.0 - p_b);
    return std::max(z, x) / std::min(z, x);
}

double asymptotic_fraction(double e_b, double alpha, double f)
{
    const double e = std::clamp(e_b, 0.0, 0.5);
    return std::max(0.0, 1.0 - binary_entropy(std::min(0.5, alpha * e)) - f * binary_entropy(e));
}

const Recipient* find_recipient(const std::vector<Recipient>& side, UserId user)
{
    auto it = std::find_if(side.begin(), side.end(), [user](const Recipient& r) { return r.user == user; });
    return it == side.end() ? nullptr : &*it;
}

ResourcePrediction predict_resource(std::size_t r, const Routing& routing, UserId ua, UserId ub,
                                    const SourceConfig& source, const StationMap& stations, double tau_ps,
                                    double acc_hz, double f, const RateOptions& opt)
{
    ResourcePrediction p;
    p.routing = r;
    const Recipient* ra = find_recipient(routing.plus_recipients, ua);
    const Recipient* rb = find_recipient(routing.minus_recipients, ub);
    if (!ra || !rb) {
        ra = find_recipient(routing.minus_recipients, ua);
        rb = find_recipient(routing.plus_recipients, ub);
    }
    if (!ra || !rb)
        throw Error(ErrorCode::InvalidPlan, "routing " + std::to_string(r) + " does not join users " +
                                                std::to_string(ua) + " and " + std::to_string(ub));

    const StationConfig& sa = stations.at(ua);
    const StationConfig& sb = stations.at(ub);
    const double rate = source.effective_rate_hz();
    const double ta = ra->fraction * arm_transmission(routing, *ra, source, sa, opt.sim);
    const double tb = rb->fraction * arm_transmission(routing, *rb, source, sb, opt.sim);
    const double pa = sa.pam_transmit_fraction;
    const double pb = sb.pam_transmit_fraction;
    const double e = combined_flip_probability(sa.polarization_error, sb.polarization_error);
    const double xx_shift = sa.pam_delta_ps - sb.pam_delta_ps;

    for (int da = 0; da < 2; ++da) {
        for (int db = 0; db < 2; ++db) {
            const double det = rate * ta * sa.detectors[da].efficiency * tb * sb.detectors[db].efficiency;
            const double same = da == db ? 0.5 * (1.0 - e) : 0.5 * e;
            const double sigma = std::hypot(sa.detectors[da].jitter_sigma_ps(), sb.detectors[db].jitter_sigma_ps());
            const double w0 = gaussian_window_fraction(tau_ps, sigma, 0.0);
            const double wx = gaussian_window_fraction(tau_ps, sigma, xx_shift);

            const double mid = det * same * (pa * pb * w0 + (1.0 - pa) * (1.0 - pb) * wx);
            p.true_coinc_hz +=
                det * (same * (pa * pb + (1.0 - pa) * (1.0 - pb)) + 0.25 * (pa * (1.0 - pb) + (1.0 - pa) * pb));
            p.mid_true_hz += mid;
            if (da != db)
                p.mid_error_hz += mid;
            p.left_true_hz += det * 0.25 * pa * (1.0 - pb) * w0;
            p.right_true_hz += det * 0.25 * (1.0 - pa) * pb * w0;
        }
    }
    p.accidental_hz = acc_hz;
    p.sifted_hz = p.mid_true_hz + acc_hz;
    p.e_b_pred = p.sifted_hz > 0.0 ? std::clamp((p.mid_error_hz + 0.5 * acc_hz) / p.sifted_hz, 0.0, 0.5) : 0.5;
    p.key_rate_bps = p.sifted_hz * asymptotic_fraction(p.e_b_pred, basis_ratio(pa, pb), f);
    return p;
}

}  // namespace

double gaussian_window_fraction(double tau_ps, double sigma_ps, double mu_ps)
{
    const double half = 0.5 * tau_ps;
    if (sigma_ps <= 0.0)
        return (mu_ps >= -half && mu_ps < half) ? 1.0 : 0.0;
    const double s = std::sqrt(2.0) * sigma_ps;
    return 0.5 * (std::erf((half - mu_ps) / s) + std::erf((half + mu_ps) / s));
}

double singles_rate(const NetworkPlan& plan, const SourceConfig& source, const StationMap& stations, UserId user,
                    int detector, const RateOptions& options)
{
    const StationConfig& st = stations.at(user);
    const auto& det = st.detectors.at(static_cast<std::size_t>(detector));
    double s = det.dark_rate_hz;
    for (const Routing& routing : plan.routings)
        for (const auto* side : {&routing.plus_recipients, &routing.minus_recipients})
            for (const Recipient& rec : *side)
                if (rec.user == user)
                    s += source.effective_rate_hz() * rec.fraction *
                         arm_transmission(routing, rec, source, st, options.sim) * 0.5 * det.efficiency;
    return s;
}

double singles_rate(const NetworkPlan& plan, const SourceConfig& source, const StationMap& stations, UserId user,
                    const RateOptions& options)
{
    return singles_rate(plan, source, stations, user, 0, options) +
           singles_rate(plan, source, stations, user, 1, options);
}

LinkPrediction predict_link(const NetworkPlan& plan, const SourceConfig& source, const StationMap& stations,
                            UserPair link, double tau_c_ps, const RateOptions& options)
{
    source.validate();
    if (!(tau_c_ps > 0.0))
        throw Error(ErrorCode::DomainError, "coincidence window must be positive");
    const auto it = plan.link_map.find(link);
    if (it == plan.link_map.end())
        throw Error(ErrorCode::InvalidPlan, "link " + to_string(link) + " is not in the plan");
    for (UserId u : {link.first, link.second}) {
        if (!stations.contains(u))
            throw Error(ErrorCode::InvalidConfig, "no station configured for user " + std::to_string(u));
        stations.at(u).validate();
    }

    LinkPrediction p;
    p.link = link;
    p.singles_a_hz = singles_rate(plan, source, stations, link.first, options);
    p.singles_b_hz = singles_rate(plan, source, stations, link.second, options);
    const double acc = p.singles_a_hz * p.singles_b_hz * tau_c_ps * 1e-12;
    const StationConfig& sa = stations.at(link.first);
    const StationConfig& sb = stations.at(link.second);
    p.alpha = basis_ratio(sa.pam_transmit_fraction, sb.pam_transmit_fraction);

    double errors = 0.0;
    double same_basis_all = 0.0;
    for (const LinkResource& lr : it->second) {
        auto rp = predict_resource(lr.routing, plan.routings.at(lr.routing), link.first, link.second, source,
                                   stations, tau_c_ps, acc, options.f, options);
        p.true_coinc_hz += rp.true_coinc_hz;
        p.mid_true_hz += rp.mid_true_hz;
        p.left_true_hz += rp.left_true_hz;
        p.right_true_hz += rp.right_true_hz;
        p.accidental_hz += rp.accidental_hz;
        p.sifted_hz += rp.sifted_hz;
        p.key_rate_bps += rp.key_rate_bps;
        errors += rp.e_b_pred * rp.sifted_hz;
        p.resources.push_back(rp);
    }
    // window efficiency relative to same-basis pairs from an infinitely wide window
    for (const LinkResource& lr : it->second)
        same_basis_all += predict_resource(lr.routing, plan.routings.at(lr.routing), link.first, link.second, source,
                                           stations, 1e15, 0.0, options.f, options)
                              .mid_true_hz;
    p.window_efficiency = same_basis_all > 0.0 ? std::min(1.0, p.mid_true_hz / same_basis_all) : 0.0;
    p.e_b_pred = p.sifted_hz > 0.0 ? std::clamp(errors / p.sifted_hz, 0.0, 0.5) : 0.5;
    return p;
}

PumpSweep sweep_pump(const NetworkPlan& plan, const SourceConfig& source, const StationMap& stations,
                     const std::vector<double>& pump_scales, double tau_c_ps, const RateOptions& options)
{
    for (std::size_t i = 0; i < pump_scales.size(); ++i)
        if (!(pump_scales[i] > 0.0) || (i > 0 && !(pump_scales[i] > pump_scales[i - 1])))
            throw Error(ErrorCode::DomainError, "pump scales must be positive and ascending");
    PumpSweep sweep;
    sweep.scales = pump_scales;
    for (double scale : pump_scales) {
        SourceConfig s = source;
        s.pump_scale = scale;
        double total = 0.0;
        for (const auto& [link, resources] : plan.link_map) {
            const LinkPrediction lp = predict_link(plan, s, stations, link, tau_c_ps, options);
            sweep.points.push_back({scale, link, lp.key_rate_bps, lp.e_b_pred, lp.accidental_hz});
            total += lp.key_rate_bps;
        }
        sweep.total_key_bps.push_back(total);
    }
    return sweep;
}

bool is_unimodal(const std::vector<double>& v)
{
    if (v.size() < 3)
        return false;
    const auto peak = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
    if (peak == 0 || peak + 1 == v.size() || !(v[peak] > 0.0))
        return false;
    for (std::size_t i = 0; i < peak; ++i)
        if (!(v[i] < v[i + 1]) && !(v[i] == 0.0 && v[i + 1] == 0.0))
            return false;
    for (std::size_t i = peak; i + 1 < v.size(); ++i)
        if (!(v[i] > v[i + 1]) && !(v[i] == 0.0 && v[i + 1] == 0.0))
            return false;
    return true;
}

bool is_non_increasing(const std::vector<double>& v)
{
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[i - 1])
            return false;
    return true;
}

const char* family_label(SubnetRule rule) noexcept { return rule == SubnetRule::Two ? "solid" : "dashed"; }

int subnets_for(int n, SubnetRule rule)
{
    if (rule == SubnetRule::Two)
        return 2;
    const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
    if (k * k != n)
        throw Error(ErrorCode::NonIntegerSubnet, std::to_string(n) + " users is not a perfect square");
    return k;
}

double ScalabilityParams::window_ps() const noexcept
{
    return tau_c_ps ? *tau_c_ps : 3.0 * std::sqrt(2.0) * jitter_fwhm_ps;
}

std::vector<ScalabilityCurve> sweep_scalability(const std::vector<int>& n_list, SubnetRule rule,
                                                const std::vector<double>& loss_db, const ScalabilityParams& params)
{
    std::vector<ScalabilityCurve> curves;
    SourceConfig source;
    source.pair_rate_hz = params.pair_rate_hz;
    source.pump_scale = 1.0;
    source.heralding_efficiency = params.heralding_efficiency;
    RateOptions opt;
    opt.f = params.f;

    for (int n : n_list) {
        ScalabilityCurve curve;
        curve.n = n;
        curve.k = subnets_for(n, rule);
        curve.rule = rule;
        const NetworkPlan plan = plan_network(n, curve.k);
        for (double loss : loss_db) {
            if (!(loss >= 0.0))
                throw Error(ErrorCode::DomainError, "link loss must be non-negative");
            StationMap stations;
            for (UserId u = 0; u < n; ++u) {
                StationConfig st;
                st.user_id = u;
                st.fiber_loss_db = 0.5 * loss;
                st.pam_delta_ps = params.pam_delta_ps;
                st.pam_transmit_fraction = params.pam_transmit_fraction;
                st.polarization_error = params.polarization_error;
                for (auto& d : st.detectors) {
                    d.efficiency = params.detector_efficiency;
                    d.jitter_fwhm_ps = params.jitter_fwhm_ps;
                    d.dark_rate_hz = params.dark_rate_hz;
                }
                stations[u] = st;
            }
            const LinkPrediction lp = predict_link(plan, source, stations, curve.link, params.window_ps(), opt);
            curve.points.push_back({loss, curve.link, lp.key_rate_bps, lp.e_b_pred, lp.accidental_hz});
        }
        curves.push_back(std::move(curve));
    }
    return curves;
}

void write_pump_sweep_csv(std::ostream& os, const PumpSweep& sweep)
{
    os << "x,link,key_rate_bps,e_b,accidental_hz\n" << std::setprecision(10);
    std::size_t k = 0;
    for (std::size_t i = 0; i < sweep.scales.size(); ++i) {
        while (k < sweep.points.size() && sweep.points[k].x == sweep.scales[i]) {
            const auto& p = sweep.points[k++];
            os << p.x << ',' << to_string(p.link) << ',' << p.key_rate_bps << ',' << p.e_b << ',' << p.accidental_hz
               << '\n';
        }
        os << sweep.scales[i] << ",total," << sweep.total_key_bps[i] << ",,\n";
    }
}

void write_scalability_csv(std::ostream& os, const std::vector<ScalabilityCurve>& curves)
{
    os << "family,n,k,x,link,key_rate_bps,e_b,accidental_hz\n" << std::setprecision(10);
    for (const auto& c : curves)
        for (const auto& p : c.points)
            os << family_label(c.rule) << ',' << c.n << ',' << c.k << ',' << p.x << ',' << to_string(p.link) << ','
               << p.key_rate_bps << ',' << p.e_b << ',' << p.accidental_hz << '\n';
}

}  // namespace qnet
