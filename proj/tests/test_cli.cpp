#include <doctest.h>

#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "qnet/cli.hpp"
#include "support.hpp"

using qnet::test::TempDir;
namespace fs = std::filesystem;

namespace {

const fs::path kLab8 = fs::path(QNET_SOURCE_DIR) / "configs" / "lab8.cfg";

struct Result {
    int code;
    std::string out;
};

/// Runs the CLI in-process with stdout and stderr captured.
Result run_cli(std::vector<std::string> args)
{
    args.insert(args.begin(), "qnet");
    std::vector<char*> argv;
    for (auto& a : args)
        argv.push_back(a.data());
    std::ostringstream out;
    std::ostringstream err;
    auto* old_out = std::cout.rdbuf(out.rdbuf());
    auto* old_err = std::cerr.rdbuf(err.rdbuf());
    const int code = qnet::cli::run(static_cast<int>(argv.size()), argv.data());
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
    return {code, out.str() + err.str()};
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p)
{
    std::vector<std::vector<std::string>> rows;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ','))
            cells.push_back(cell);
        if (!line.empty() && line.back() == ',')
            cells.emplace_back();
        rows.push_back(cells);
    }
    return rows;
}

nlohmann::json lab8_doc() { return nlohmann::json::parse(slurp(kLab8), nullptr, true, true); }

fs::path write_doc(const fs::path& dir, const std::string& name, const nlohmann::json& doc)
{
    const fs::path p = dir / name;
    std::ofstream(p) << doc.dump(2);
    return p;
}

}  // namespace

TEST_CASE("plan command")
{
    TempDir dir("cli_plan");
    const auto r = run_cli({"plan", "--users", "8", "--subnets", "2", "--out", (dir.path / "p.json").string()});
    CHECK(r.code == 0);
    CHECK(r.out.find("16 channels, 28 links, 4 premium") != std::string::npos);
    const auto doc = nlohmann::json::parse(slurp(dir.path / "p.json"));
    CHECK(doc["n_users"] == 8);

    const auto bad = run_cli({"plan", "--users", "9", "--subnets", "2"});
    CHECK(bad.code == 2);
    CHECK(bad.out.find("integral") != std::string::npos);

    const auto two = run_cli({"plan", "--users", "2", "--subnets", "1"});
    CHECK(two.code == 0);
    CHECK(two.out.find("2 channels, 1 links, 0 premium") != std::string::npos);
}

TEST_CASE("usage errors and help")
{
    CHECK(run_cli({}).code == 2);
    CHECK(run_cli({"frobnicate"}).code == 2);
    CHECK(run_cli({"plan", "--users", "8"}).code == 2);
    CHECK(run_cli({"plan", "--users", "eight", "--subnets", "2"}).code == 2);
    CHECK(run_cli({"--help"}).code == 0);
    CHECK(run_cli({"plan", "--help"}).code == 0);
}

TEST_CASE("simulate, distill, histogram and export on lab8")
{
    TempDir dir("cli_e2e");
    const fs::path tags = dir.path / "tags";
    const auto sim = run_cli({"simulate", "--config", kLab8.string(), "--out", tags.string(), "--duration", "3"});
    REQUIRE(sim.code == 0);
    for (int u = 0; u < 8; ++u) {
        const fs::path f = tags / ("user_" + std::to_string(u) + ".qnt");
        REQUIRE(fs::exists(f));
        CHECK(fs::file_size(f) > 1000);
    }

    SUBCASE("repeat run is byte-identical")
    {
        const fs::path again = dir.path / "again";
        REQUIRE(run_cli({"simulate", "--config", kLab8.string(), "--out", again.string(), "--duration", "3",
                         "--threads", "3"})
                    .code == 0);
        for (int u = 0; u < 8; ++u) {
            const std::string name = "user_" + std::to_string(u) + ".qnt";
            CHECK(slurp(tags / name) == slurp(again / name));
        }
    }

    SUBCASE("distill reports every link")
    {
        const fs::path csv = dir.path / "keys.csv";
        const fs::path totals = dir.path / "totals.txt";
        const auto r = run_cli({"distill", "--tags", tags.string(), "--config", kLab8.string(), "--block", "3",
                                "--out", csv.string(), "--totals", totals.string(), "--tau", "300"});
        REQUIRE(r.code == 0);
        const auto rows = read_csv(csv);
        REQUIRE(rows.size() == 29);
        CHECK(rows[0].size() == 11);
        int with_two_qber = 0;
        for (std::size_t i = 1; i < rows.size(); ++i) {
            REQUIRE(rows[i].size() == 11);
            CHECK(std::stoull(rows[i][2]) > 0);
            CHECK(std::stod(rows[i][3]) < 0.1);
            if (!rows[i][9].empty() && !rows[i][10].empty()) {
                ++with_two_qber;
                CHECK((rows[i][0] == "0-5" || rows[i][0] == "1-4" || rows[i][0] == "2-7" || rows[i][0] == "3-6"));
            }
        }
        CHECK(with_two_qber == 4);
        CHECK(slurp(totals).find("total") != std::string::npos);
    }

    SUBCASE("distill needs a plan source")
    {
        CHECK(run_cli({"distill", "--tags", tags.string(), "--block", "1", "--out", (dir.path / "x.csv").string()})
                  .code == 2);
    }

    SUBCASE("histogram around the calibrated peak")
    {
        const fs::path csv = dir.path / "hist.csv";
        const auto r = run_cli({"histogram", "--tags", tags.string(), "--config", kLab8.string(), "--a", "0", "--b",
                                "1", "--out", csv.string()});
        REQUIRE(r.code == 0);
        const auto rows = read_csv(csv);
        REQUIRE(rows.size() > 100);
        CHECK(rows[0][0] == "offset_ps");
        std::size_t best = 1;
        for (std::size_t i = 1; i < rows.size(); ++i)
            if (std::stoull(rows[i][1]) > std::stoull(rows[best][1]))
                best = i;
        REQUIRE(r.out.rfind("offset ", 0) == 0);
        const double offset = std::stod(r.out.substr(7));
        CHECK(std::abs(std::stod(rows[best][0]) - offset) < 100);
    }

    SUBCASE("export writes csv")
    {
        const fs::path csv = dir.path / "u0.csv";
        REQUIRE(run_cli({"export", "--tag", (tags / "user_0.qnt").string(), "--out", csv.string()}).code == 0);
        const auto rows = read_csv(csv);
        CHECK(rows[0] == std::vector<std::string>{"timestamp_ps", "detector_id"});
        CHECK(rows.size() > 100);
    }
}

TEST_CASE("distill rejects empty or missing tag directories")
{
    TempDir dir("cli_empty");
    const std::string out = (dir.path / "k.csv").string();
    CHECK(run_cli({"distill", "--tags", dir.path.string(), "--config", kLab8.string(), "--block", "1", "--out", out})
              .code == 2);
    CHECK(run_cli({"distill", "--tags", (dir.path / "nope").string(), "--config", kLab8.string(), "--block", "1",
                   "--out", out})
              .code == 2);
    CHECK_FALSE(fs::exists(out));
}

TEST_CASE("configuration schema errors exit 2")
{
    TempDir dir("cli_cfg");
    auto missing_user = lab8_doc();
    missing_user["users"].erase(3);
    auto unknown_key = lab8_doc();
    unknown_key["source"]["colour"] = "blue";
    auto bad_type = lab8_doc();
    bad_type["sim"]["duration_s"] = "long";
    for (const auto& [name, doc] : {std::pair{"missing.cfg", missing_user}, std::pair{"unknown.cfg", unknown_key},
                                    std::pair{"type.cfg", bad_type}}) {
        INFO(name);
        const fs::path cfg = write_doc(dir.path, name, doc);
        const auto r = run_cli({"simulate", "--config", cfg.string(), "--out", (dir.path / "t").string()});
        CHECK(r.code == 2);
    }
    CHECK(run_cli({"simulate", "--config", (dir.path / "absent.cfg").string(), "--out", dir.path.string()}).code ==
          2);
}

TEST_CASE("sweep command")
{
    TempDir dir("cli_sweep");
    const fs::path power = dir.path / "power.csv";
    const auto r = run_cli({"sweep", "--kind", "power", "--config", kLab8.string(), "--grid",
                            "0.1,0.3,1,3,10,30,100,300,1000,3000", "--out", power.string()});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("unimodal") != std::string::npos);
    CHECK(r.out.find("not unimodal") == std::string::npos);
    const auto rows = read_csv(power);
    CHECK(rows.size() == 1 + 10 * 29);

    const fs::path loss = dir.path / "loss.csv";
    REQUIRE(run_cli({"sweep", "--kind", "loss", "--grid", "0,10,20,30", "--solid", "16,32", "--dashed", "16,49",
                     "--out", loss.string()})
                .code == 0);
    const auto lrows = read_csv(loss);
    REQUIRE(lrows.size() == 1 + 4 * 4);
    CHECK(lrows[1][0] == "solid");
    CHECK(lrows.back()[0] == "dashed");

    CHECK(run_cli({"sweep", "--kind", "speed", "--grid", "1", "--out", (dir.path / "x.csv").string()}).code == 2);
    CHECK(run_cli({"sweep", "--kind", "power", "--config", kLab8.string(), "--grid", "1,a", "--out",
                   (dir.path / "x.csv").string()})
              .code == 2);
    CHECK(run_cli({"sweep", "--kind", "loss", "--grid", "0", "--dashed", "15", "--out",
                   (dir.path / "x.csv").string()})
              .code == 2);
}
