#include "qnet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "qnet/error.hpp"

namespace qnet {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& where, const std::string& what)
{
    throw Error(ErrorCode::InvalidConfig, where + ": " + what);
}

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed)
{
    if (!obj.is_object())
        fail(where, "expected an object");
    for (const auto& [key, value] : obj.items()) {
        bool known = false;
        for (const char* a : allowed)
            known = known || key == a;
        if (!known)
            fail(where, "unknown key \"" + key + "\"");
    }
}

const json& section(const json& obj, const char* key, const std::string& where)
{
    if (!obj.contains(key))
        fail(where, std::string("missing section \"") + key + "\"");
    return obj.at(key);
}

double number(const json& obj, const char* key, const std::string& where, std::optional<double> fallback = {})
{
    if (!obj.contains(key)) {
        if (fallback)
            return *fallback;
        fail(where, std::string("missing \"") + key + "\"");
    }
    const json& v = obj.at(key);
    if (!v.is_number())
        fail(where + "." + key, "expected a number");
    return v.get<double>();
}

int integer(const json& obj, const char* key, const std::string& where)
{
    if (!obj.contains(key))
        fail(where, std::string("missing \"") + key + "\"");
    const json& v = obj.at(key);
    if (!v.is_number_integer())
        fail(where + "." + key, "expected an integer");
    return v.get<int>();
}

DetectorConfig parse_detector(const json& d, const std::string& where)
{
    check_keys(d, where, {"efficiency", "jitter_fwhm_ps", "dark_hz", "dead_ps", "delay_ps"});
    DetectorConfig det;
    det.efficiency = number(d, "efficiency", where);
    det.jitter_fwhm_ps = number(d, "jitter_fwhm_ps", where);
    det.dark_rate_hz = number(d, "dark_hz", where);
    det.dead_time_ps = number(d, "dead_ps", where, 0.0);
    det.delay_ps = number(d, "delay_ps", where, 0.0);
    return det;
}

AlphaMode parse_alpha_mode(const json& v, const std::string& where)
{
    if (!v.is_string())
        fail(where, "expected a string");
    const auto s = v.get<std::string>();
    if (s == "measured")
        return AlphaMode::Measured;
    if (s == "nominal")
        return AlphaMode::Nominal;
    if (s == "worst_case")
        return AlphaMode::WorstCase;
    fail(where, "alpha_mode must be measured, nominal or worst_case");
}

const char* alpha_mode_name(AlphaMode m)
{
    switch (m) {
    case AlphaMode::Nominal:
        return "nominal";
    case AlphaMode::WorstCase:
        return "worst_case";
    case AlphaMode::Measured:
        break;
    }
    return "measured";
}

}  // namespace

NetworkConfig parse_config(const json& doc)
{
    check_keys(doc, "config", {"network", "source", "users", "security", "sim", "mux"});
    NetworkConfig cfg;

    const json& net = section(doc, "network", "config");
    check_keys(net, "network", {"users", "subnets"});
    cfg.users = integer(net, "users", "network");
    cfg.subnets = integer(net, "subnets", "network");
    if (cfg.users < 1 || cfg.subnets < 1)
        fail("network", "users and subnets must be positive");

    const json& src = section(doc, "source", "config");
    check_keys(src, "source", {"pair_rate_hz", "pump_scale", "heralding"});
    cfg.source.pair_rate_hz = number(src, "pair_rate_hz", "source");
    cfg.source.pump_scale = number(src, "pump_scale", "source", 1.0);
    cfg.source.heralding_efficiency = number(src, "heralding", "source");
    try {
        cfg.source.validate();
    } catch (const Error& e) {
        fail("source", e.what());
    }

    const json& users = section(doc, "users", "config");
    if (!users.is_array())
        fail("users", "expected an array");
    for (std::size_t i = 0; i < users.size(); ++i) {
        const std::string where = "users[" + std::to_string(i) + "]";
        const json& u = users[i];
        check_keys(u, where, {"id", "name", "loss_db", "length_m", "e_pol", "pam", "detectors"});
        StationConfig st;
        st.user_id = integer(u, "id", where);
        if (st.user_id < 0 || st.user_id >= cfg.users)
            fail(where, "id " + std::to_string(st.user_id) + " outside 0.." + std::to_string(cfg.users - 1));
        if (cfg.stations.contains(st.user_id))
            fail(where, "duplicate user id " + std::to_string(st.user_id));
        if (u.contains("name")) {
            if (!u.at("name").is_string())
                fail(where + ".name", "expected a string");
            cfg.names[st.user_id] = u.at("name").get<std::string>();
        }
        st.fiber_loss_db = number(u, "loss_db", where);
        st.fiber_length_m = number(u, "length_m", where);
        st.polarization_error = number(u, "e_pol", where);
        const json& pam = section(u, "pam", where);
        check_keys(pam, where + ".pam", {"delta_ps", "split"});
        st.pam_delta_ps = number(pam, "delta_ps", where + ".pam");
        st.pam_transmit_fraction = number(pam, "split", where + ".pam");
        const json& dets = section(u, "detectors", where);
        if (!dets.is_array() || dets.size() != 2)
            fail(where + ".detectors", "expected exactly two detectors");
        for (std::size_t d = 0; d < 2; ++d)
            st.detectors[d] = parse_detector(dets[d], where + ".detectors[" + std::to_string(d) + "]");
        try {
            st.validate();
        } catch (const Error& e) {
            fail(where, e.what());
        }
        cfg.stations[st.user_id] = st;
    }
    for (UserId u = 0; u < cfg.users; ++u)
        if (!cfg.stations.contains(u))
            fail("users", "no section for user " + std::to_string(u));

    const json& sec = section(doc, "security", "config");
    check_keys(sec, "security", {"xi_ph", "epsilon", "f", "alpha_mode", "worst_case_alpha"});
    cfg.security.xi_ph = number(sec, "xi_ph", "security");
    cfg.security.epsilon = number(sec, "epsilon", "security", cfg.security.xi_ph / 2.0);
    cfg.security.f = number(sec, "f", "security", 1.0);
    if (sec.contains("alpha_mode"))
        cfg.security.alpha_mode = parse_alpha_mode(sec.at("alpha_mode"), "security.alpha_mode");
    cfg.security.worst_case_alpha = number(sec, "worst_case_alpha", "security", kWorstCaseAlpha);
    try {
        cfg.security.validate();
    } catch (const Error& e) {
        fail("security", e.what());
    }

    const json& sim = section(doc, "sim", "config");
    check_keys(sim, "sim", {"duration_s", "seed", "tau_c_ps", "group_index", "threads"});
    cfg.duration_s = number(sim, "duration_s", "sim");
    if (!(cfg.duration_s > 0.0))
        fail("sim.duration_s", "must be positive");
    if (!sim.contains("seed") || !sim.at("seed").is_number_unsigned())
        fail("sim", "\"seed\" must be a non-negative integer");
    cfg.seed = sim.at("seed").get<std::uint64_t>();
    if (!sim.contains("tau_c_ps"))
        fail("sim", "missing \"tau_c_ps\"");
    const json& tau = sim.at("tau_c_ps");
    if (tau.is_string()) {
        if (tau.get<std::string>() != "optimize")
            fail("sim.tau_c_ps", "expected a number or \"optimize\"");
    } else if (tau.is_number() && tau.get<double>() > 0.0) {
        cfg.tau_c_ps = static_cast<std::int64_t>(std::llround(tau.get<double>()));
    } else {
        fail("sim.tau_c_ps", "expected a positive number or \"optimize\"");
    }
    cfg.sim.group_index = number(sim, "group_index", "sim", 1.468);
    cfg.sim.threads = static_cast<unsigned>(number(sim, "threads", "sim", 1.0));

    if (doc.contains("mux")) {
        const json& mux = doc.at("mux");
        check_keys(mux, "mux", {"channel_delay_step_ps", "channel_delay_ps", "routing_loss_db"});
        if (mux.contains("channel_delay_step_ps")) {
            const double step = number(mux, "channel_delay_step_ps", "mux");
            for (int c = 1; c <= 4 * cfg.users * cfg.users; ++c)
                cfg.sim.channel_delay_ps[c] = step * c;
            if (!(step >= 0.0))
                fail("mux.channel_delay_step_ps", "must be non-negative");
        }
        for (const char* key : {"channel_delay_ps", "routing_loss_db"}) {
            if (!mux.contains(key))
                continue;
            const json& m = mux.at(key);
            if (!m.is_object())
                fail(std::string("mux.") + key, "expected an object keyed by channel index");
            auto& target = std::string(key) == "channel_delay_ps" ? cfg.sim.channel_delay_ps : cfg.sim.routing_loss_db;
            for (const auto& [k, v] : m.items()) {
                int index = 0;
                try {
                    std::size_t used = 0;
                    index = std::stoi(k, &used);
                    if (used != k.size())
                        throw std::invalid_argument(k);
                } catch (const std::exception&) {
                    fail(std::string("mux.") + key, "key \"" + k + "\" is not a channel index");
                }
                if (!v.is_number())
                    fail(std::string("mux.") + key + "." + k, "expected a number");
                target[index] = v.get<double>();
            }
        }
    }
    return cfg;
}

NetworkConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::InvalidConfig, "cannot open config " + path.string());
    json doc;
    try {
        doc = json::parse(in, nullptr, true, true);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
    }
    return parse_config(doc);
}

json config_to_json(const NetworkConfig& cfg)
{
    json doc;
    doc["network"] = {{"users", cfg.users}, {"subnets", cfg.subnets}};
    doc["source"] = {{"pair_rate_hz", cfg.source.pair_rate_hz},
                     {"pump_scale", cfg.source.pump_scale},
                     {"heralding", cfg.source.heralding_efficiency}};
    json users = json::array();
    for (const auto& [id, st] : cfg.stations) {
        json u{{"id", id},
               {"loss_db", st.fiber_loss_db},
               {"length_m", st.fiber_length_m},
               {"e_pol", st.polarization_error},
               {"pam", {{"delta_ps", st.pam_delta_ps}, {"split", st.pam_transmit_fraction}}}};
        if (auto it = cfg.names.find(id); it != cfg.names.end())
            u["name"] = it->second;
        json dets = json::array();
        for (const auto& d : st.detectors)
            dets.push_back({{"efficiency", d.efficiency},
                            {"jitter_fwhm_ps", d.jitter_fwhm_ps},
                            {"dark_hz", d.dark_rate_hz},
                            {"dead_ps", d.dead_time_ps},
                            {"delay_ps", d.delay_ps}});
        u["detectors"] = std::move(dets);
        users.push_back(std::move(u));
    }
    doc["users"] = std::move(users);
    doc["security"] = {{"xi_ph", cfg.security.xi_ph},
                       {"epsilon", cfg.security.epsilon},
                       {"f", cfg.security.f},
                       {"alpha_mode", alpha_mode_name(cfg.security.alpha_mode)},
                       {"worst_case_alpha", cfg.security.worst_case_alpha}};
    doc["sim"] = {{"duration_s", cfg.duration_s},
                  {"seed", cfg.seed},
                  {"group_index", cfg.sim.group_index},
                  {"threads", cfg.sim.threads}};
    if (cfg.tau_c_ps)
        doc["sim"]["tau_c_ps"] = *cfg.tau_c_ps;
    else
        doc["sim"]["tau_c_ps"] = "optimize";
    if (!cfg.sim.channel_delay_ps.empty() || !cfg.sim.routing_loss_db.empty()) {
        json mux = json::object();
        for (const auto& [name, m] : {std::pair{"channel_delay_ps", &cfg.sim.channel_delay_ps},
                                      std::pair{"routing_loss_db", &cfg.sim.routing_loss_db}}) {
            if (m->empty())
                continue;
            json obj = json::object();
            for (const auto& [k, v] : *m)
                obj[std::to_string(k)] = v;
            mux[name] = std::move(obj);
        }
        doc["mux"] = std::move(mux);
    }
    return doc;
}

void write_file_atomic(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body)
{
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out)
            throw Error(ErrorCode::Io, "cannot open " + tmp.string());
        body(out);
        out.flush();
        if (!out)
            throw Error(ErrorCode::Io, "write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec)
        throw Error(ErrorCode::Io, "cannot move " + tmp.string() + " into place: " + ec.message());
}

}  // namespace qnet
