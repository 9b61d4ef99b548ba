#include "qnet/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "qnet/config.hpp"
#include "qnet/correlate.hpp"
#include "qnet/distill.hpp"
#include "qnet/error.hpp"
#include "qnet/photonsim.hpp"
#include "qnet/ratemodel.hpp"
#include "qnet/tagio.hpp"
#include "qnet/topology.hpp"

namespace qnet::cli {

namespace {

namespace fs = std::filesystem;

/// Thrown for command-line misuse that CLI11 itself cannot detect.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<double> parse_list(const std::string& text, const char* what)
{
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size())
                throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError(std::string("bad value \"") + item + "\" in " + what);
        }
    }
    if (out.empty())
        throw UsageError(std::string(what) + " is empty");
    return out;
}

std::vector<int> parse_int_list(const std::string& text, const char* what)
{
    std::vector<int> out;
    for (double v : parse_list(text, what)) {
        if (v != static_cast<double>(static_cast<int>(v)))
            throw UsageError(std::string(what) + " must contain integers");
        out.push_back(static_cast<int>(v));
    }
    return out;
}

NetworkPlan load_plan(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::InvalidPlan, "cannot open plan " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidPlan, path.string() + ": " + e.what());
    }
    NetworkPlan plan = plan_from_json(doc);
    const ValidationReport report = validate_plan(plan);
    if (!report.ok())
        throw Error(ErrorCode::InvalidPlan, path.string() + ": " + report.violations.front().message);
    return plan;
}

fs::path tag_path(const fs::path& dir, UserId user) { return dir / ("user_" + std::to_string(user) + ".qnt"); }

std::string label(const NetworkConfig* cfg, UserId u)
{
    if (cfg)
        if (auto it = cfg->names.find(u); it != cfg->names.end())
            return it->second;
    return std::to_string(u);
}

int cmd_plan(int users, int subnets, const std::string& out)
{
    const NetworkPlan plan = plan_network(users, subnets);
    const ValidationReport report = validate_plan(plan);
    if (!report.ok()) {
        for (const auto& v : report.violations)
            std::cerr << "violation: " << to_string(v.kind) << ": " << v.message << '\n';
        return kExitFailure;
    }
    if (!out.empty())
        write_file_atomic(out, [&](std::ostream& os) { os << plan_to_json(plan).dump(2) << '\n'; });
    std::cout << 2 * plan.routings.size() << " channels, " << plan.link_map.size() << " links, "
              << plan.premium_links.size() << " premium\n";
    return kExitOk;
}

int cmd_simulate(const std::string& config_path, const std::string& plan_path, const std::string& out_dir,
                 double duration_override, unsigned threads)
{
    const NetworkConfig cfg = load_config(config_path);
    const NetworkPlan plan = plan_path.empty() ? plan_network(cfg.users, cfg.subnets) : load_plan(plan_path);
    if (plan.n_users != cfg.users)
        throw Error(ErrorCode::InvalidConfig, "config describes " + std::to_string(cfg.users) +
                                                  " users but the plan has " + std::to_string(plan.n_users));
    const double duration = duration_override > 0.0 ? duration_override : cfg.duration_s;
    SimulationOptions sim = cfg.sim;
    sim.record_truth = false;
    if (threads > 0)
        sim.threads = threads;

    const auto streams = simulate_network(plan, cfg.source, cfg.stations, duration, cfg.seed, sim);
    fs::create_directories(out_dir);
    const auto duration_ps = static_cast<std::uint64_t>(std::llround(duration * 1e12));
    for (const auto& [user, stream] : streams) {
        tagio::write_tags(tag_path(out_dir, user), user, stream, duration_ps);
        std::cout << "user " << label(&cfg, user) << ": " << stream.size() << " tags\n";
    }
    return kExitOk;
}

struct LoadedTags {
    UserStreams streams;
    double duration_s = 0.0;
};

LoadedTags load_tag_dir(const fs::path& dir, int n_users, const NetworkConfig* cfg)
{
    if (!fs::is_directory(dir))
        throw UsageError("tag directory " + dir.string() + " does not exist");
    LoadedTags out;
    bool any = false;
    for (const auto& entry : fs::directory_iterator(dir))
        any = any || entry.path().extension() == ".qnt";
    if (!any)
        throw UsageError("no .qnt tag files in " + dir.string());

    for (UserId u = 0; u < n_users; ++u) {
        const fs::path p = tag_path(dir, u);
        if (!fs::exists(p))
            throw UsageError("missing tag file " + p.string());
        auto [header, records] = tagio::read_stream(p);
        if (header.merged_flag)
            throw Error(ErrorCode::BadHeader, p.string() + " has no detector ids; raw local tags are required");
        if (header.user_id != u)
            throw Error(ErrorCode::BadHeader, p.string() + " belongs to user " + std::to_string(header.user_id));
        out.duration_s = std::max(out.duration_s, static_cast<double>(header.duration_ps) * 1e-12);
        const Calibration cal = cfg ? calibration_for(cfg->stations.at(u)) : Calibration{0, 0};
        out.streams[u] = merge_tags(tagio::to_stream(records), cal, u);
    }
    return out;
}

int cmd_distill(const std::string& tags_dir, const std::string& plan_path, const std::string& config_path,
                double block_s, const std::string& out_csv, const std::string& totals_path, double tau_override,
                unsigned threads)
{
    std::optional<NetworkConfig> cfg;
    if (!config_path.empty())
        cfg = load_config(config_path);
    const NetworkPlan plan = !plan_path.empty() ? load_plan(plan_path)
                             : cfg             ? plan_network(cfg->users, cfg->subnets)
                                               : throw UsageError("distill needs --plan or --config");
    if (cfg && cfg->users != plan.n_users)
        throw Error(ErrorCode::InvalidConfig, "config and plan disagree on the number of users");
    if (!(block_s > 0.0))
        throw UsageError("--block must be positive");

    const LoadedTags tags = load_tag_dir(tags_dir, plan.n_users, cfg ? &*cfg : nullptr);
    const SecurityParams params = cfg ? cfg->security : SecurityParams{};
    PipelineOptions opt;
    opt.duration_s = tags.duration_s;
    opt.threads = threads > 0 ? threads : 1;
    if (tau_override > 0.0)
        opt.tau_c_ps = static_cast<std::int64_t>(std::llround(tau_override));
    else if (cfg)
        opt.tau_c_ps = cfg->tau_c_ps;
    if (cfg)
        opt.delta_ps = static_cast<std::int64_t>(std::llround(cfg->stations.begin()->second.pam_delta_ps));
    opt.calibration.delta_ps = opt.delta_ps;

    const auto reports = blockwise_report(tags.streams, plan, block_s, params, opt);
    write_file_atomic(out_csv, [&](std::ostream& os) { write_key_report_csv(os, reports); });
    const auto totals = summarize(reports);
    write_totals_table(std::cout, totals);
    if (!totals_path.empty())
        write_file_atomic(totals_path, [&](std::ostream& os) { write_totals_table(os, totals); });
    return kExitOk;
}

double default_window(const NetworkConfig& cfg)
{
    if (cfg.tau_c_ps)
        return static_cast<double>(*cfg.tau_c_ps);
    const auto& d = cfg.stations.begin()->second.detectors[0];
    return 3.0 * std::sqrt(2.0) * d.jitter_fwhm_ps;
}

int cmd_sweep(const std::string& kind, const std::string& config_path, const std::string& grid,
              const std::string& out_csv, double tau_override, const std::string& solid, const std::string& dashed)
{
    if (kind == "power") {
        if (config_path.empty())
            throw UsageError("power sweep needs --config");
        const NetworkConfig cfg = load_config(config_path);
        const NetworkPlan plan = plan_network(cfg.users, cfg.subnets);
        const std::vector<double> scales = parse_list(grid, "--grid");
        const double tau = tau_override > 0.0 ? tau_override : default_window(cfg);
        RateOptions opt;
        opt.f = cfg.security.f;
        opt.sim = cfg.sim;
        const PumpSweep sweep = sweep_pump(plan, cfg.source, cfg.stations, scales, tau, opt);
        write_file_atomic(out_csv, [&](std::ostream& os) { write_pump_sweep_csv(os, sweep); });
        const auto best = static_cast<std::size_t>(
            std::max_element(sweep.total_key_bps.begin(), sweep.total_key_bps.end()) - sweep.total_key_bps.begin());
        std::cout << "total key peaks at pump scale " << scales[best] << " (" << sweep.total_key_bps[best]
                  << " bps); " << (is_unimodal(sweep.total_key_bps) ? "unimodal" : "not unimodal") << '\n';
        return kExitOk;
    }
    if (kind == "loss") {
        ScalabilityParams params;
        if (!config_path.empty()) {
            const NetworkConfig cfg = load_config(config_path);
            params.pair_rate_hz = cfg.source.effective_rate_hz();
            params.heralding_efficiency = cfg.source.heralding_efficiency;
            params.f = cfg.security.f;
        }
        if (tau_override > 0.0)
            params.tau_c_ps = tau_override;
        const std::vector<double> losses = parse_list(grid, "--grid");
        auto curves = sweep_scalability(parse_int_list(solid, "--solid"), SubnetRule::Two, losses, params);
        auto more = sweep_scalability(parse_int_list(dashed, "--dashed"), SubnetRule::SqrtN, losses, params);
        curves.insert(curves.end(), more.begin(), more.end());
        write_file_atomic(out_csv, [&](std::ostream& os) { write_scalability_csv(os, curves); });
        for (const auto& c : curves)
            std::cout << family_label(c.rule) << " n=" << c.n << " k=" << c.k << ": " << c.points.front().key_rate_bps
                      << " bps at " << c.points.front().x << " dB\n";
        return kExitOk;
    }
    throw UsageError("--kind must be power or loss");
}

int cmd_histogram(const std::string& tags_dir, const std::string& config_path, int a, int b, std::int64_t bin,
                  std::int64_t half_range, const std::string& out_csv)
{
    std::optional<NetworkConfig> cfg;
    if (!config_path.empty())
        cfg = load_config(config_path);
    const int n = std::max(a, b) + 1;
    const LoadedTags tags = load_tag_dir(tags_dir, cfg ? cfg->users : n, cfg ? &*cfg : nullptr);
    if (!tags.streams.contains(a) || !tags.streams.contains(b) || a == b)
        throw UsageError("--a and --b must name two different users");
    const auto& ta = tags.streams.at(a).merged.timestamps;
    const auto& tb = tags.streams.at(b).merged.timestamps;
    CalibrationOptions copt;
    if (cfg)
        copt.delta_ps = static_cast<std::int64_t>(std::llround(cfg->stations.at(a).pam_delta_ps));
    const std::int64_t offset = calibrate_offset(ta, tb, copt);
    const std::int64_t tau = cfg && cfg->tau_c_ps ? *cfg->tau_c_ps : std::ranges::max(PipelineOptions{}.tau_candidates);
    const auto hist = cross_correlation(ta, tb, bin, half_range > 0 ? half_range : 2 * copt.delta_ps + 5 * tau, offset);
    write_file_atomic(out_csv, [&](std::ostream& os) { write_histogram_csv(os, hist); });
    std::cout << "offset " << offset << " ps, " << hist.total() << " pairs in range\n";
    return kExitOk;
}

int cmd_export(const std::string& tag_file, const std::string& out_csv)
{
    const auto [header, records] = tagio::read_stream(tag_file);
    write_file_atomic(out_csv, [&](std::ostream& os) { tagio::export_csv(os, header, records); });
    return kExitOk;
}

int exit_code_for(ErrorCode code)
{
    switch (code) {
    case ErrorCode::NonIntegerSubnet:
    case ErrorCode::InvalidPlan:
    case ErrorCode::InvalidConfig:
        return kExitUsage;
    default:
        return kExitFailure;
    }
}

}  // namespace

int run(int argc, char** argv)
{
    CLI::App app{"Planner and simulator for a fully connected entanglement-based QKD network"};
    app.require_subcommand(1);

    int users = 0;
    int subnets = 0;
    std::string out;
    auto* plan_cmd = app.add_subcommand("plan", "Allocate channels and beamsplitters for n users");
    plan_cmd->add_option("--users", users, "number of users")->required();
    plan_cmd->add_option("--subnets", subnets, "number of identical subnets (k-fold splitters)")->required();
    plan_cmd->add_option("--out", out, "plan file to write");

    std::string config;
    std::string plan_path;
    std::string out_dir;
    double duration = 0.0;
    unsigned threads = 0;
    auto* sim_cmd = app.add_subcommand("simulate", "Simulate raw detector time tags for every user");
    sim_cmd->add_option("--config", config, "network configuration")->required();
    sim_cmd->add_option("--plan", plan_path, "plan file (default: planned from the config)");
    sim_cmd->add_option("--out", out_dir, "output directory for user_<id>.qnt")->required();
    sim_cmd->add_option("--duration", duration, "override sim.duration_s");
    sim_cmd->add_option("--threads", threads, "worker threads");

    std::string tags_dir;
    double block_s = 0.0;
    std::string totals;
    double tau = 0.0;
    auto* distill_cmd = app.add_subcommand("distill", "Correlate, sift and compute finite-key lengths per link");
    distill_cmd->add_option("--tags", tags_dir, "directory of user_<id>.qnt files")->required();
    distill_cmd->add_option("--plan", plan_path, "plan file");
    distill_cmd->add_option("--config", config, "configuration (calibration, security parameters, window)");
    distill_cmd->add_option("--block", block_s, "block length in seconds")->required();
    distill_cmd->add_option("--out", out, "key report CSV")->required();
    distill_cmd->add_option("--totals", totals, "per-link totals table");
    distill_cmd->add_option("--tau", tau, "coincidence window in ps (overrides the config)");
    distill_cmd->add_option("--threads", threads, "worker threads");

    std::string kind;
    std::string grid;
    std::string solid = "16,32,64";
    std::string dashed = "16,49,64";
    auto* sweep_cmd = app.add_subcommand("sweep", "Closed-form pump-power or loss sweeps");
    sweep_cmd->add_option("--kind", kind, "power or loss")->required();
    sweep_cmd->add_option("--config", config, "network configuration");
    sweep_cmd->add_option("--grid", grid, "comma-separated pump scales or link losses (dB)")->required();
    sweep_cmd->add_option("--out", out, "sweep CSV")->required();
    sweep_cmd->add_option("--tau", tau, "coincidence window in ps");
    sweep_cmd->add_option("--solid", solid, "user counts for the two-subnet family");
    sweep_cmd->add_option("--dashed", dashed, "user counts for the sqrt(n)-subnet family");

    int user_a = 0;
    int user_b = 1;
    std::int64_t bin = 10;
    std::int64_t half_range = 0;
    auto* hist_cmd = app.add_subcommand("histogram", "Cross-correlation histogram of two users around their peak");
    hist_cmd->add_option("--tags", tags_dir, "directory of user_<id>.qnt files")->required();
    hist_cmd->add_option("--config", config, "configuration (detector calibration)");
    hist_cmd->add_option("--a", user_a, "first user")->required();
    hist_cmd->add_option("--b", user_b, "second user")->required();
    hist_cmd->add_option("--bin", bin, "bin width in ps");
    hist_cmd->add_option("--half-range", half_range, "half range in ps (default: 2 delta + 5 tau_c)");
    hist_cmd->add_option("--out", out, "histogram CSV")->required();

    std::string tag_file;
    auto* export_cmd = app.add_subcommand("export", "Dump a tag file as CSV");
    export_cmd->add_option("--tag", tag_file, "tag file")->required();
    export_cmd->add_option("--out", out, "CSV output")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (plan_cmd->parsed())
            return cmd_plan(users, subnets, out);
        if (sim_cmd->parsed())
            return cmd_simulate(config, plan_path, out_dir, duration, threads);
        if (distill_cmd->parsed())
            return cmd_distill(tags_dir, plan_path, config, block_s, out, totals, tau, threads);
        if (sweep_cmd->parsed())
            return cmd_sweep(kind, config, grid, out, tau, solid, dashed);
        if (hist_cmd->parsed())
            return cmd_histogram(tags_dir, config, user_a, user_b, bin, half_range, out);
        if (export_cmd->parsed())
            return cmd_export(tag_file, out);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace qnet::cli
