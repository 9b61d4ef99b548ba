#pragma once

#include <compare>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace qnet {

using UserId = int;

/// Offset of a DWDM channel from the degeneracy channel (ITU 34).
/// Negative and positive indices of equal magnitude carry the two photons of
/// an energy-conserving pair.
class ChannelIndex {
public:
    static constexpr int kCentralItu = 34;

    explicit ChannelIndex(int index);

    int value() const noexcept { return index_; }
    int itu() const noexcept { return kCentralItu + index_; }

    auto operator<=>(const ChannelIndex&) const = default;

private:
    int index_;
};

struct ChannelPair {
    ChannelIndex plus;
    ChannelIndex minus;

    bool conserves_energy() const noexcept { return plus.value() + minus.value() == 0; }

    auto operator<=>(const ChannelPair&) const = default;
};

struct Recipient {
    UserId user;
    double fraction;

    bool operator==(const Recipient&) const = default;
};

/// One channel pair and the beamsplitter fan-out of each of its photons.
struct Routing {
    ChannelPair pair;
    std::vector<Recipient> plus_recipients;
    std::vector<Recipient> minus_recipients;

    bool operator==(const Routing&) const = default;
};

/// Unordered user pair, normalised so that first < second.
struct UserPair {
    UserId first;
    UserId second;

    static UserPair of(UserId a, UserId b) noexcept { return a < b ? UserPair{a, b} : UserPair{b, a}; }

    auto operator<=>(const UserPair&) const = default;
};

std::string to_string(UserPair link);

struct LinkResource {
    std::size_t routing;    ///< index into NetworkPlan::routings
    ChannelPair pair;
    double probability;     ///< joint probability that the pair lands on this link

    bool operator==(const LinkResource&) const = default;
};

using LinkMap = std::map<UserPair, std::vector<LinkResource>>;

struct NetworkPlan {
    int n_users = 0;
    int k_subnets = 0;
    std::vector<Routing> routings;
    LinkMap link_map;
    std::set<UserPair> premium_links;

    bool operator==(const NetworkPlan&) const = default;
};

/// Wavelength channels needed for n users sharing k-fold beamsplitters.
/// Throws Error(NonIntegerSubnet) unless k | n and k^2 | n.
int channel_count(int n, int k);

/// Users each receive (n/k - 1) in-subnet channels plus (k - 1) cross channels.
int channels_per_user(int n, int k);
int expected_premium_count(int n, int k);

/// Smallest user count >= n that the k-fold construction supports.
int round_up_users(int n, int k);

NetworkPlan plan_network(int n, int k);

/// Derives the link map from routings alone: every (plus, minus) recipient
/// combination with distinct users is a link resource.
LinkMap build_link_map(const std::vector<Routing>& routings);

enum class ViolationKind {
    UncoveredPair,
    ZeroChannel,
    ChannelOutOfRange,
    ChannelReuse,
    EnergyConservation,
    SplitFraction,
    EmptyRecipients,
    UnknownUser,
    ChannelsPerUser,
    PremiumMismatch,
    LinkMapMismatch,
};

const char* to_string(ViolationKind kind) noexcept;

struct Violation {
    ViolationKind kind;
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;

    bool ok() const noexcept { return violations.empty(); }
    std::size_t count(ViolationKind kind) const;
};

ValidationReport validate_plan(const NetworkPlan& plan);

nlohmann::json plan_to_json(const NetworkPlan& plan);
NetworkPlan plan_from_json(const nlohmann::json& doc);

}  // namespace qnet
