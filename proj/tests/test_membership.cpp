#include <gtest/gtest.h>

#include "crowdmr/membership.hpp"

namespace crowdmr {
namespace {

using namespace std::chrono_literals;

ConnectivityView view_at(Millis now, std::initializer_list<std::pair<std::uint32_t, Millis>> heard) {
  ConnectivityView v;
  v.observer = NodeId{0};
  v.now = now;
  v.timeout = 5000ms;
  for (auto [p, at] : heard) v = record_heartbeat(v, NodeId{p}, at);
  return v;
}

TEST(RecordHeartbeat, FirstSighting) {
  auto v = view_at(0ms, {{3, 100ms}});
  EXPECT_EQ(v.last_heard.at(NodeId{3}), 100ms);
}

TEST(RecordHeartbeat, KeepsTheNewerTime) {
  auto v = view_at(0ms, {{3, 150ms}, {3, 100ms}});
  EXPECT_EQ(v.last_heard.at(NodeId{3}), 150ms);
}

TEST(RecordHeartbeat, FivePeersMakeSixLive) {
  auto v = view_at(10ms, {{1, 1ms}, {2, 2ms}, {3, 3ms}, {4, 4ms}, {5, 5ms}});
  EXPECT_EQ(v.live_nodes().size(), 6u);
  EXPECT_EQ(degree(v), 6u);
}

TEST(RecordHeartbeat, SelfIsRejected) {
  EXPECT_THROW(view_at(0ms, {{0, 1ms}}), SelfHeartbeat);
}

TEST(Degree, SelfOnly) {
  EXPECT_EQ(degree(view_at(0ms, {})), 1u);
  EXPECT_EQ(degree(view_at(1000000ms, {})), 1u);
}

TEST(Degree, StalePeersDoNotCount) {
  // now = 10 s, timeout 5 s: 1..3 heard within it, 4 and 5 are stale.
  auto v = view_at(10000ms, {{1, 9000ms}, {2, 6000ms}, {3, 5000ms}, {4, 4999ms}, {5, 0ms}});
  EXPECT_EQ(degree(v), 4u);
  EXPECT_TRUE(v.is_live(NodeId{3}));
  EXPECT_FALSE(v.is_live(NodeId{4}));
}

TEST(Degree, FullConnectivity) {
  auto v = view_at(100ms, {{1, 90ms}, {2, 90ms}, {3, 90ms}, {4, 90ms}, {5, 90ms}});
  EXPECT_EQ(degree(v), 6u);
}

// At least two thirds of all nodes, the node itself included.
TEST(Eligibility, ThresholdTable) {
  struct Row {
    std::size_t n, threshold;
  };
  for (auto [n, t] : {Row{1, 1}, Row{2, 2}, Row{3, 2}, Row{4, 3}, Row{5, 4}, Row{6, 4}, Row{7, 5},
                      Row{9, 6}, Row{10, 7}, Row{100, 67}}) {
    EXPECT_EQ(eligibility_threshold(n), t) << "N=" << n;
    EXPECT_TRUE(is_eligible(t, n));
    EXPECT_FALSE(is_eligible(t - 1, n));
  }
}

TEST(Eligibility, SixNodes) {
  EXPECT_TRUE(is_eligible(std::size_t{4}, 6));
  EXPECT_FALSE(is_eligible(std::size_t{3}, 6));
}

TEST(Eligibility, ThreeNodesAndOne) {
  EXPECT_EQ(eligibility_threshold(3), 2u);
  EXPECT_TRUE(is_eligible(std::size_t{1}, 1));
}

TEST(Eligibility, FromView) {
  auto v = view_at(10000ms, {{1, 9000ms}, {2, 9000ms}, {3, 9000ms}, {4, 0ms}});
  EXPECT_TRUE(is_eligible(v, 6));
  EXPECT_FALSE(is_eligible(view_at(10000ms, {{1, 9000ms}, {2, 9000ms}}), 6));
}

TEST(SelectLeader, IncumbentKeepsTheRole) {
  std::vector<LeaderCandidate> c{{NodeId{2}, 5}, {NodeId{5}, 4}};
  EXPECT_EQ(select_leader(c, NodeId{5}, 6), NodeId{5});
}

TEST(SelectLeader, LowestEligibleWhenIncumbentGone) {
  std::vector<LeaderCandidate> c{{NodeId{5}, 4}, {NodeId{2}, 5}, {NodeId{0}, 1}};
  EXPECT_EQ(select_leader(c, NodeId{0}, 6), NodeId{2});
}

TEST(SelectLeader, NobodyEligible) {
  std::vector<LeaderCandidate> c{{NodeId{1}, 3}, {NodeId{2}, 2}};
  EXPECT_EQ(select_leader(c, std::nullopt, 6), std::nullopt);
}

// Incumbent retained whenever eligible, whoever else is eligible too.
TEST(SelectLeader, IncumbentRetainedTable) {
  for (std::size_t n = 1; n <= 9; ++n) {
    for (std::size_t d = 1; d <= n; ++d) {
      std::vector<LeaderCandidate> c{{NodeId{0}, n}, {NodeId{7}, d}};
      auto got = select_leader(c, NodeId{7}, n);
      EXPECT_EQ(got, is_eligible(d, n) ? NodeId{7} : NodeId{0}) << "N=" << n << " d=" << d;
    }
  }
}

RoleState worker(std::uint32_t id, std::uint64_t term, std::optional<std::uint32_t> master) {
  RoleState s;
  s.node = NodeId{id};
  s.term = Term{term};
  if (master) s.known_master = NodeId{*master};
  return s;
}

TEST(StepRole, SilentMasterStartsElection) {
  auto tr = step_role(worker(1, 0, 0), role_event::HeartbeatTimeoutOnMaster{4}, 6);
  EXPECT_EQ(tr.state.role, Role::Candidate);
  EXPECT_EQ(tr.state.term, Term{1});
  EXPECT_EQ(tr.state.voted_for, NodeId{1});
  ASSERT_EQ(tr.actions.size(), 1u);
  EXPECT_EQ(tr.actions[0].kind, RoleAction::Kind::BroadcastClaim);
  EXPECT_EQ(tr.actions[0].term, Term{1});
}

TEST(StepRole, IneligibleNodeStaysWorker) {
  auto tr = step_role(worker(1, 0, 0), role_event::HeartbeatTimeoutOnMaster{3}, 6);
  EXPECT_EQ(tr.state.role, Role::Worker);
  EXPECT_EQ(tr.state.term, Term{0});
  EXPECT_FALSE(tr.state.known_master);
  EXPECT_TRUE(tr.actions.empty());
}

TEST(StepRole, QuorumMakesMaster) {
  auto s = step_role(worker(1, 0, 0), role_event::HeartbeatTimeoutOnMaster{4}, 6).state;
  auto tr = step_role(s, role_event::LeaderAckQuorum{Term{1}, 3}, 6);
  EXPECT_EQ(tr.state.role, Role::Candidate);
  tr = step_role(s, role_event::LeaderAckQuorum{Term{1}, 4}, 6);
  EXPECT_EQ(tr.state.role, Role::Master);
  EXPECT_EQ(tr.state.term, Term{1});
  ASSERT_EQ(tr.actions.size(), 1u);
  EXPECT_EQ(tr.actions[0].kind, RoleAction::Kind::BroadcastAnnounce);
}

TEST(StepRole, MasterStepsDownOnHigherClaim) {
  auto s = worker(1, 1, 1);
  s.role = Role::Master;
  auto tr = step_role(s, role_event::LeaderClaimReceived{Term{3}, NodeId{4}, 5, std::nullopt}, 6);
  EXPECT_EQ(tr.state.role, Role::Worker);
  EXPECT_EQ(tr.state.term, Term{3});
}

TEST(StepRole, StaleEventIgnored) {
  auto s = worker(1, 5, 2);
  for (RoleEvent ev : {RoleEvent{role_event::LeaderClaimReceived{Term{4}, NodeId{3}, 6, std::nullopt}},
                       RoleEvent{role_event::LeaderAckQuorum{Term{4}, 6}},
                       RoleEvent{role_event::HigherTermObserved{Term{4}, NodeId{3}}},
                       RoleEvent{role_event::MasterObserved{Term{4}, NodeId{3}}},
                       RoleEvent{role_event::AbdicateObserved{Term{4}, NodeId{2}}},
                       RoleEvent{role_event::ElectionTimedOut{Term{4}}}}) {
    auto tr = step_role(s, ev, 6);
    EXPECT_TRUE(tr.stale);
    EXPECT_EQ(tr.state, s);
    EXPECT_TRUE(tr.actions.empty());
  }
}

TEST(StepRole, OneVotePerTerm) {
  auto s = worker(2, 0, std::nullopt);
  auto tr = step_role(s, role_event::LeaderClaimReceived{Term{1}, NodeId{3}, 5, std::nullopt}, 6);
  ASSERT_EQ(tr.actions.size(), 1u);
  EXPECT_TRUE(tr.actions[0].granted);
  EXPECT_EQ(tr.state.voted_for, NodeId{3});
  auto again = step_role(tr.state, role_event::LeaderClaimReceived{Term{1}, NodeId{4}, 6, std::nullopt}, 6);
  ASSERT_EQ(again.actions.size(), 1u);
  EXPECT_FALSE(again.actions[0].granted);
  auto repeat = step_role(tr.state, role_event::LeaderClaimReceived{Term{1}, NodeId{3}, 5, std::nullopt}, 6);
  EXPECT_TRUE(repeat.actions[0].granted);
  auto next = step_role(tr.state, role_event::LeaderClaimReceived{Term{2}, NodeId{4}, 6, std::nullopt}, 6);
  EXPECT_TRUE(next.actions[0].granted);
  EXPECT_EQ(next.state.term, Term{2});
}

TEST(StepRole, IneligibleClaimantDenied) {
  auto tr = step_role(worker(2, 0, std::nullopt),
                      role_event::LeaderClaimReceived{Term{1}, NodeId{3}, 3, std::nullopt}, 6);
  EXPECT_FALSE(tr.actions[0].granted);
}

TEST(StepRole, LiveEligibleIncumbentBlocksClaim) {
  auto s = worker(2, 1, 0);
  auto tr = step_role(
      s, role_event::LeaderClaimReceived{Term{2}, NodeId{3}, 6, LeaderCandidate{NodeId{0}, 5}}, 6);
  EXPECT_EQ(tr.state, s);  // term not adopted
  EXPECT_FALSE(tr.actions[0].granted);
}

TEST(StepRole, IneligibleIncumbentDoesNotBlock) {
  auto tr = step_role(worker(2, 1, 0),
                      role_event::LeaderClaimReceived{Term{2}, NodeId{3}, 6, LeaderCandidate{NodeId{0}, 2}},
                      6);
  EXPECT_TRUE(tr.actions[0].granted);
  EXPECT_EQ(tr.state.term, Term{2});
}

TEST(StepRole, CandidateDoesNotVoteForRival) {
  auto s = step_role(worker(1, 0, 0), role_event::HeartbeatTimeoutOnMaster{5}, 6).state;
  auto tr = step_role(s, role_event::LeaderClaimReceived{Term{1}, NodeId{2}, 5, std::nullopt}, 6);
  EXPECT_FALSE(tr.actions[0].granted);
  EXPECT_EQ(tr.state.role, Role::Candidate);
}

TEST(StepRole, ConnectivityLossAbdicates) {
  auto s = worker(0, 2, 0);
  s.role = Role::Master;
  auto keep = step_role(s, role_event::ConnectivityCheckDue{4}, 6);
  EXPECT_EQ(keep.state.role, Role::Master);
  auto drop = step_role(s, role_event::ConnectivityCheckDue{3}, 6);
  EXPECT_EQ(drop.state.role, Role::Worker);
  ASSERT_EQ(drop.actions.size(), 1u);
  EXPECT_EQ(drop.actions[0].kind, RoleAction::Kind::BroadcastAbdicate);
}

TEST(StepRole, AnnouncementAdoptsMaster) {
  auto tr = step_role(worker(4, 1, std::nullopt), role_event::MasterObserved{Term{3}, NodeId{2}}, 6);
  EXPECT_EQ(tr.state.role, Role::Worker);
  EXPECT_EQ(tr.state.term, Term{3});
  EXPECT_EQ(tr.state.known_master, NodeId{2});
}

TEST(StepRole, ElectionTimeoutFallsBack) {
  auto s = step_role(worker(1, 0, 0), role_event::HeartbeatTimeoutOnMaster{5}, 6).state;
  auto tr = step_role(s, role_event::ElectionTimedOut{Term{1}}, 6);
  EXPECT_EQ(tr.state.role, Role::Worker);
  EXPECT_EQ(tr.state.term, Term{1});
}

TEST(StepRole, SingleNodeElectsItself) {
  auto s = step_role(worker(0, 0, std::nullopt), role_event::HeartbeatTimeoutOnMaster{1}, 1).state;
  auto tr = step_role(s, role_event::LeaderAckQuorum{Term{1}, 1}, 1);
  EXPECT_EQ(tr.state.role, Role::Master);
}

TEST(ClusterConfig, Validation) {
  auto c = ClusterConfig::local(3);
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.endpoints.at(NodeId{2}), "127.0.0.1:47002");
  auto bad = c;
  bad.initial_master = NodeId{9};
  EXPECT_THROW(bad.validate(), InvalidConfig);
  bad = c;
  bad.heartbeat_timeout = bad.heartbeat_period;
  EXPECT_THROW(bad.validate(), InvalidConfig);
  bad = c;
  bad.reducer_count = 0;
  EXPECT_THROW(bad.validate(), InvalidConfig);
  bad = c;
  bad.node_count = 4;
  EXPECT_THROW(bad.validate(), InvalidConfig);
}

}  // namespace
}  // namespace crowdmr
