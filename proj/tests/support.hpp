#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "qnet/photonsim.hpp"
#include "qnet/topology.hpp"

namespace qnet::test {

inline StationConfig ideal_station(UserId id)
{
    StationConfig st;
    st.user_id = id;
    st.polarization_error = 0.0;
    for (auto& d : st.detectors) {
        d.efficiency = 1.0;
        d.jitter_fwhm_ps = 0.0;
        d.dark_rate_hz = 0.0;
    }
    return st;
}

inline StationMap uniform_stations(int n, const StationConfig& prototype)
{
    StationMap m;
    for (UserId u = 0; u < n; ++u) {
        StationConfig st = prototype;
        st.user_id = u;
        m[u] = st;
    }
    return m;
}

inline std::vector<std::int64_t> random_sorted(std::size_t n, std::int64_t span, std::uint64_t seed)
{
    std::mt19937_64 gen(seed);
    std::uniform_int_distribution<std::int64_t> dist(0, span);
    std::vector<std::int64_t> v(n);
    for (auto& x : v)
        x = dist(gen);
    std::sort(v.begin(), v.end());
    return v;
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag)
    {
        std::random_device rd;
        path = std::filesystem::temp_directory_path() / ("qnet_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

/// |observed - expected| within k standard deviations of a Poisson count.
inline bool within_poisson(double observed, double expected, double k = 3.0)
{
    return std::abs(observed - expected) <= k * std::sqrt(std::max(expected, 1.0));
}

}  // namespace qnet::test
