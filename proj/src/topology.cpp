#include "qnet/topology.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include "qnet/error.hpp"

namespace qnet {

namespace {

constexpr double kFractionTol = 1e-9;

void require_divisible(int n, int k)
{
    if (n < 1 || k < 1)
        throw Error(ErrorCode::NonIntegerSubnet, "users and subnets must be positive");
    if (n % k != 0 || n % (k * k) != 0) {
        std::ostringstream msg;
        msg << "n=" << n << " users cannot be split by " << k << "-fold beamsplitters: need n/k and n/k^2 integral"
            << " (nearest supported size is " << round_up_users(n, k) << ")";
        throw Error(ErrorCode::NonIntegerSubnet, msg.str());
    }
}

bool construction_valid(int n, int k) noexcept
{
    return n >= 1 && k >= 1 && n % (k * k) == 0;
}

std::vector<Recipient> fan_out(std::vector<UserId> users)
{
    const double fraction = 1.0 / static_cast<double>(users.size());
    std::vector<Recipient> out;
    out.reserve(users.size());
    for (UserId u : users)
        out.push_back({u, fraction});
    return out;
}

}  // namespace

ChannelIndex::ChannelIndex(int index) : index_(index)
{
    if (index == 0)
        throw Error(ErrorCode::InvalidPlan, "channel index 0 is the degeneracy channel and carries no pair");
}

std::string to_string(UserPair link)
{
    return std::to_string(link.first) + "-" + std::to_string(link.second);
}

int channel_count(int n, int k)
{
    require_divisible(n, k);
    const int m = n / k;
    return m * (m - 1) + (n / (k * k)) * k * (k - 1);
}

int channels_per_user(int n, int k)
{
    require_divisible(n, k);
    return (n / k - 1) + (k - 1);
}

int expected_premium_count(int n, int k)
{
    require_divisible(n, k);
    // Each cross pair links k plus-users to k minus-users; the k(k-1) links
    // between different base users duplicate an in-subnet resource.
    const int pairs_of_subnets = k * (k - 1) / 2;
    return (n / (k * k)) * k * (k - 1) * pairs_of_subnets;
}

int round_up_users(int n, int k)
{
    if (k < 1)
        return n;
    const int step = k * k;
    return std::max(step, ((n + step - 1) / step) * step);
}

NetworkPlan plan_network(int n, int k)
{
    require_divisible(n, k);
    const int m = n / k;
    const int groups = n / (k * k);
    auto copy_of = [m](int base, int subnet) { return subnet * m + base; };

    NetworkPlan plan;
    plan.n_users = n;
    plan.k_subnets = k;

    int next_index = 1;
    auto add = [&](std::vector<UserId> plus, std::vector<UserId> minus) {
        Routing r{ChannelPair{ChannelIndex(next_index), ChannelIndex(-next_index)}, fan_out(std::move(plus)),
                  fan_out(std::move(minus))};
        plan.routings.push_back(std::move(r));
        ++next_index;
    };

    // In-subnet pairs: one per base-user pair, each photon split over the k
    // subnet copies of its user.
    for (int i = 0; i < m; ++i) {
        for (int j = i + 1; j < m; ++j) {
            std::vector<UserId> plus, minus;
            for (int s = 0; s < k; ++s) {
                plus.push_back(copy_of(i, s));
                minus.push_back(copy_of(j, s));
            }
            add(std::move(plus), std::move(minus));
        }
    }

    // Cross pairs join copies of the same base user living in different
    // subnets. Each group of k base users shares one pair per subnet pair.
    for (int s = 0; s < k; ++s) {
        for (int g = 0; g < groups; ++g) {
            for (int t = s + 1; t < k; ++t) {
                std::vector<UserId> plus, minus;
                for (int r = 0; r < k; ++r) {
                    plus.push_back(copy_of(g * k + r, s));
                    minus.push_back(copy_of(g * k + r, t));
                }
                add(std::move(plus), std::move(minus));
            }
        }
    }

    plan.link_map = build_link_map(plan.routings);
    for (const auto& [link, resources] : plan.link_map)
        if (resources.size() >= 2)
            plan.premium_links.insert(link);
    return plan;
}

LinkMap build_link_map(const std::vector<Routing>& routings)
{
    LinkMap map;
    for (std::size_t r = 0; r < routings.size(); ++r) {
        const Routing& routing = routings[r];
        for (const Recipient& p : routing.plus_recipients) {
            for (const Recipient& q : routing.minus_recipients) {
                if (p.user == q.user)
                    continue;
                auto& resources = map[UserPair::of(p.user, q.user)];
                auto it = std::find_if(resources.begin(), resources.end(),
                                       [r](const LinkResource& lr) { return lr.routing == r; });
                if (it == resources.end())
                    resources.push_back({r, routing.pair, p.fraction * q.fraction});
                else
                    it->probability += p.fraction * q.fraction;
            }
        }
    }
    return map;
}

const char* to_string(ViolationKind kind) noexcept
{
    switch (kind) {
    case ViolationKind::UncoveredPair: return "uncovered-pair";
    case ViolationKind::ZeroChannel: return "zero-channel";
    case ViolationKind::ChannelOutOfRange: return "channel-out-of-range";
    case ViolationKind::ChannelReuse: return "channel-reuse";
    case ViolationKind::EnergyConservation: return "energy-conservation";
    case ViolationKind::SplitFraction: return "split-fraction";
    case ViolationKind::EmptyRecipients: return "empty-recipients";
    case ViolationKind::UnknownUser: return "unknown-user";
    case ViolationKind::ChannelsPerUser: return "channels-per-user";
    case ViolationKind::PremiumMismatch: return "premium-mismatch";
    case ViolationKind::LinkMapMismatch: return "link-map-mismatch";
    }
    return "unknown";
}

std::size_t ValidationReport::count(ViolationKind kind) const
{
    return static_cast<std::size_t>(
        std::count_if(violations.begin(), violations.end(), [kind](const Violation& v) { return v.kind == kind; }));
}

ValidationReport validate_plan(const NetworkPlan& plan)
{
    ValidationReport report;
    auto fail = [&](ViolationKind kind, std::string msg) { report.violations.push_back({kind, std::move(msg)}); };

    const bool regular = construction_valid(plan.n_users, plan.k_subnets);
    const int max_index = regular ? channel_count(plan.n_users, plan.k_subnets) / 2
                                  : static_cast<int>(plan.routings.size());

    std::map<int, std::vector<std::size_t>> index_use;
    std::map<UserId, int> channels_at_user;

    auto check_side = [&](std::size_t r, const char* side, const std::vector<Recipient>& recipients) {
        if (recipients.empty()) {
            fail(ViolationKind::EmptyRecipients, "routing " + std::to_string(r) + " has no " + side + " recipients");
            return;
        }
        double sum = 0.0;
        const double equal_share = 1.0 / static_cast<double>(recipients.size());
        bool unequal = false;
        for (const Recipient& rec : recipients) {
            sum += rec.fraction;
            unequal |= std::abs(rec.fraction - equal_share) > kFractionTol;
            if (rec.user < 0 || rec.user >= plan.n_users)
                fail(ViolationKind::UnknownUser,
                     "routing " + std::to_string(r) + " sends to unknown user " + std::to_string(rec.user));
            else
                ++channels_at_user[rec.user];
        }
        if (std::abs(sum - 1.0) > kFractionTol || unequal) {
            std::ostringstream msg;
            msg << "routing " << r << " " << side << " split fractions sum to " << sum
                << (unequal ? " and are not an equal beamsplitter share" : "");
            fail(ViolationKind::SplitFraction, msg.str());
        }
    };

    for (std::size_t r = 0; r < plan.routings.size(); ++r) {
        const Routing& routing = plan.routings[r];
        for (ChannelIndex ci : {routing.pair.plus, routing.pair.minus}) {
            if (ci.value() == 0)
                fail(ViolationKind::ZeroChannel, "routing " + std::to_string(r) + " uses channel 0");
            if (std::abs(ci.value()) > max_index)
                fail(ViolationKind::ChannelOutOfRange, "routing " + std::to_string(r) + " uses channel " +
                                                           std::to_string(ci.value()) + " beyond +/-" +
                                                           std::to_string(max_index));
            index_use[ci.value()].push_back(r);
        }
        if (!routing.pair.conserves_energy())
            fail(ViolationKind::EnergyConservation, "routing " + std::to_string(r) + " pairs channels " +
                                                        std::to_string(routing.pair.plus.value()) + " and " +
                                                        std::to_string(routing.pair.minus.value()));
        check_side(r, "plus", routing.plus_recipients);
        check_side(r, "minus", routing.minus_recipients);
    }

    for (const auto& [index, users] : index_use) {
        if (users.size() > 1) {
            std::ostringstream msg;
            msg << "channel " << index << " assigned to routings";
            for (std::size_t r : users)
                msg << ' ' << r;
            fail(ViolationKind::ChannelReuse, msg.str());
        }
    }

    const LinkMap derived = build_link_map(plan.routings);
    for (UserId a = 0; a < plan.n_users; ++a)
        for (UserId b = a + 1; b < plan.n_users; ++b)
            if (!derived.contains(UserPair{a, b}))
                fail(ViolationKind::UncoveredPair, "no resource links users " + to_string(UserPair{a, b}));

    if (derived != plan.link_map)
        fail(ViolationKind::LinkMapMismatch, "stored link map differs from the one implied by the routings");

    if (regular) {
        const int expected = channels_per_user(plan.n_users, plan.k_subnets);
        for (UserId u = 0; u < plan.n_users; ++u) {
            const int got = channels_at_user.contains(u) ? channels_at_user[u] : 0;
            if (got != expected)
                fail(ViolationKind::ChannelsPerUser, "user " + std::to_string(u) + " receives " + std::to_string(got) +
                                                         " channels, expected " + std::to_string(expected));
        }
    }

    std::set<UserPair> derived_premium;
    for (const auto& [link, resources] : derived)
        if (resources.size() >= 2)
            derived_premium.insert(link);
    if (derived_premium != plan.premium_links)
        fail(ViolationKind::PremiumMismatch, "premium set lists " + std::to_string(plan.premium_links.size()) +
                                                 " links but " + std::to_string(derived_premium.size()) +
                                                 " links carry two or more resources");
    for (const UserPair& link : plan.premium_links) {
        auto it = derived.find(link);
        if (it == derived.end() || it->second.size() < 2)
            fail(ViolationKind::PremiumMismatch, "premium link " + to_string(link) + " has fewer than 2 resources");
    }
    if (regular && static_cast<int>(plan.premium_links.size()) != expected_premium_count(plan.n_users, plan.k_subnets))
        fail(ViolationKind::PremiumMismatch,
             "expected " + std::to_string(expected_premium_count(plan.n_users, plan.k_subnets)) + " premium links");

    return report;
}

namespace {

nlohmann::json recipients_json(const std::vector<Recipient>& recipients)
{
    auto arr = nlohmann::json::array();
    for (const Recipient& r : recipients)
        arr.push_back({{"user", r.user}, {"fraction", r.fraction}});
    return arr;
}

std::vector<Recipient> recipients_from(const nlohmann::json& arr)
{
    std::vector<Recipient> out;
    for (const auto& r : arr)
        out.push_back({r.at("user").get<UserId>(), r.at("fraction").get<double>()});
    return out;
}

}  // namespace

nlohmann::json plan_to_json(const NetworkPlan& plan)
{
    nlohmann::json doc;
    doc["n_users"] = plan.n_users;
    doc["k_subnets"] = plan.k_subnets;

    auto routings = nlohmann::json::array();
    for (const Routing& r : plan.routings)
        routings.push_back({{"plus", r.pair.plus.value()},
                            {"minus", r.pair.minus.value()},
                            {"plus_recipients", recipients_json(r.plus_recipients)},
                            {"minus_recipients", recipients_json(r.minus_recipients)}});
    doc["routings"] = std::move(routings);

    auto links = nlohmann::json::array();
    for (const auto& [link, resources] : plan.link_map) {
        auto res = nlohmann::json::array();
        for (const LinkResource& lr : resources)
            res.push_back({{"routing", lr.routing},
                           {"plus", lr.pair.plus.value()},
                           {"minus", lr.pair.minus.value()},
                           {"probability", lr.probability}});
        links.push_back({{"users", {link.first, link.second}}, {"resources", std::move(res)}});
    }
    doc["link_map"] = std::move(links);

    auto premium = nlohmann::json::array();
    for (const UserPair& link : plan.premium_links)
        premium.push_back({link.first, link.second});
    doc["premium_links"] = std::move(premium);
    return doc;
}

NetworkPlan plan_from_json(const nlohmann::json& doc)
{
    try {
        NetworkPlan plan;
        plan.n_users = doc.at("n_users").get<int>();
        plan.k_subnets = doc.at("k_subnets").get<int>();
        for (const auto& r : doc.at("routings"))
            plan.routings.push_back({ChannelPair{ChannelIndex(r.at("plus").get<int>()),
                                                 ChannelIndex(r.at("minus").get<int>())},
                                     recipients_from(r.at("plus_recipients")),
                                     recipients_from(r.at("minus_recipients"))});
        for (const auto& entry : doc.at("link_map")) {
            const auto& users = entry.at("users");
            auto& resources = plan.link_map[UserPair::of(users.at(0).get<UserId>(), users.at(1).get<UserId>())];
            for (const auto& lr : entry.at("resources"))
                resources.push_back({lr.at("routing").get<std::size_t>(),
                                     ChannelPair{ChannelIndex(lr.at("plus").get<int>()),
                                                 ChannelIndex(lr.at("minus").get<int>())},
                                     lr.at("probability").get<double>()});
        }
        for (const auto& link : doc.at("premium_links"))
            plan.premium_links.insert(UserPair::of(link.at(0).get<UserId>(), link.at(1).get<UserId>()));
        return plan;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidPlan, std::string("malformed plan document: ") + e.what());
    }
}

}  // namespace qnet
