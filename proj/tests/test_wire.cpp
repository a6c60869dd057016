#include <gtest/gtest.h>

#include <random>

#include "crowdmr/wire.hpp"

namespace crowdmr {
namespace {

Message msg(MsgType t, std::uint32_t sender, std::uint64_t term, std::uint64_t seq, Payload p = {}) {
  return Message{t, NodeId{sender}, Term{term}, seq, std::move(p)};
}

TEST(Encode, Heartbeat) { EXPECT_EQ(encode(msg(MsgType::HB, 2, 1, 7)), "CMR1 HB 2 1 7 -\n"); }

TEST(Encode, MapOutCarriesCounts) {
  EXPECT_EQ(encode(msg(MsgType::MAP_OUT, 3, 1, 12, {{"Man-room3", "30"}})),
            "CMR1 MAP_OUT 3 1 12 Man-room3=30\n");
}

TEST(Encode, EscapesReservedBytes) {
  auto m = msg(MsgType::TASK, 1, 0, 1, {{"a b", "x;y=z%\n"}});
  EXPECT_EQ(encode(m), "CMR1 TASK 1 0 1 a%20b=x%3By%3Dz%25%0A\n");
  EXPECT_EQ(decode(encode(m)), m);
}

TEST(Encode, OversizeRejected) {
  auto m = msg(MsgType::RED_OUT, 1, 1, 1, {{"k", std::string(1200, 'x')}});
  try {
    encode(m);
    FAIL() << "expected OversizeMessage";
  } catch (const WireError& e) {
    EXPECT_EQ(e.code(), WireError::Code::OversizeMessage);
    EXPECT_EQ(e.field(), "frame");
  }
}

TEST(Encode, ExactlyAtBudget) {
  auto m = msg(MsgType::HB, 1, 1, 1, {{"k", ""}});
  auto base = encode(m).size();
  m.payload[0].second.assign(kMaxFrameBytes - base, 'x');
  EXPECT_EQ(encode(m).size(), kMaxFrameBytes);
  m.payload[0].second += 'x';
  EXPECT_THROW(encode(m), WireError);
}

TEST(Decode, Heartbeat) {
  EXPECT_EQ(decode("CMR1 HB 2 1 7 -\n"), msg(MsgType::HB, 2, 1, 7));
}

void expect_error(std::string_view frame, WireError::Code code, const std::string& field) {
  try {
    decode(frame);
    ADD_FAILURE() << "decoded: " << frame;
  } catch (const WireError& e) {
    EXPECT_EQ(e.code(), code) << frame;
    EXPECT_EQ(e.field(), field) << frame;
  }
}

TEST(Decode, Errors) {
  using C = WireError::Code;
  expect_error("XXX1 HB 2 1 7 -\n", C::BadMagic, "magic");
  expect_error("CMR1 HB 2 1 notanum -\n", C::MalformedField, "seq");
  expect_error("CMR1 BEAT 2 1 7 -\n", C::UnknownType, "type");
  expect_error("CMR1 HB x 1 7 -\n", C::MalformedField, "sender");
  expect_error("CMR1 HB 2 -1 7 -\n", C::MalformedField, "term");
  expect_error("CMR1 HB 2 1 7\n", C::MalformedField, "payload");
  expect_error("CMR1 HB 2 1\n", C::MalformedField, "seq");
  expect_error("CMR1 HB 2 1 7 \n", C::MalformedField, "payload");
  expect_error("CMR1 HB 2 1 7 a=b c\n", C::MalformedField, "payload");
  expect_error("CMR1 HB 2 1 7 novalue\n", C::MalformedField, "payload");
  expect_error("CMR1 HB 2 1 7 a=%4\n", C::MalformedField, "payload");
  expect_error("CMR1 HB 2 1 7 a=%zz\n", C::MalformedField, "payload");
  expect_error("CMR1 HB 4294967296 1 7 -\n", C::MalformedField, "sender");
  expect_error("", C::BadMagic, "magic");
  expect_error(std::string(1300, 'a'), C::OversizeMessage, "frame");
}

TEST(Decode, TrailingNewlineOptional) {
  EXPECT_EQ(decode("CMR1 HB 2 1 7 -"), msg(MsgType::HB, 2, 1, 7));
}

TEST(MsgType, NamesRoundTrip) {
  for (const auto& [t, name] : kMsgTypeNames) {
    EXPECT_EQ(parse_msg_type(name), t);
    EXPECT_EQ(msg_type_name(t), name);
  }
  EXPECT_TRUE(is_data_message(MsgType::MAP_OUT));
  EXPECT_TRUE(is_data_message(MsgType::RED_OUT));
  EXPECT_FALSE(is_data_message(MsgType::TASK));
}

std::string random_text(std::mt19937_64& gen, std::size_t max_len) {
  std::size_t len = gen() % (max_len + 1);
  std::string s;
  for (std::size_t i = 0; i < len; ++i) {
    switch (gen() % 4) {
      case 0:
        s += static_cast<char>(gen() % 256);
        break;
      case 1:
        s += " ;=%\n-"[gen() % 6];
        break;
      default:
        s += static_cast<char>('a' + gen() % 26);
    }
  }
  return s;
}

Message random_message(std::mt19937_64& gen) {
  Message m;
  m.type = kMsgTypeNames[gen() % kMsgTypeNames.size()].first;
  m.sender = NodeId{static_cast<std::uint32_t>(gen())};
  m.term = Term{gen() % 3 == 0 ? gen() : gen() % 100};
  m.seq = gen();
  std::size_t pairs = gen() % 8;
  for (std::size_t i = 0; i < pairs; ++i) m.payload.emplace_back(random_text(gen, 12), random_text(gen, 24));
  return m;
}

TEST(RoundTrip, TwentyThousandRandomMessages) {
  std::mt19937_64 gen(20240601);
  int checked = 0;
  for (int i = 0; i < 20000; ++i) {
    auto m = random_message(gen);
    auto frame = encode(m);
    ASSERT_LE(frame.size(), kMaxFrameBytes);
    ASSERT_EQ(std::count(frame.begin(), frame.end(), '\n'), 1) << frame;
    ASSERT_EQ(decode(frame), m) << frame;
    ++checked;
  }
  EXPECT_EQ(checked, 20000);
}

TEST(Fuzz, MutatedFramesOnlyRaiseWireError) {
  std::mt19937_64 gen(7);
  for (int i = 0; i < 20000; ++i) {
    auto frame = encode(random_message(gen));
    int edits = 1 + gen() % 4;
    for (int e = 0; e < edits && !frame.empty(); ++e) {
      auto pos = gen() % frame.size();
      switch (gen() % 3) {
        case 0:
          frame[pos] = static_cast<char>(gen() % 256);
          break;
        case 1:
          frame.erase(pos, 1 + gen() % 8);
          break;
        default:
          frame.insert(pos, 1, " %;=\n"[gen() % 5]);
      }
    }
    try {
      auto m = decode(frame);
      (void)encode_unchecked(m);
    } catch (const WireError&) {
    }
  }
}

TEST(Dedup, FreshThenDuplicate) {
  DedupWindow w;
  auto r = check_duplicate(w, NodeId{2}, 7);
  EXPECT_TRUE(r.fresh);
  auto again = check_duplicate(r.window, NodeId{2}, 7);
  EXPECT_FALSE(again.fresh);
}

TEST(Dedup, OutOfOrderTolerated) {
  DedupWindow w;
  EXPECT_TRUE(w.check(NodeId{2}, 9));
  EXPECT_TRUE(w.check(NodeId{2}, 8));
  EXPECT_FALSE(w.check(NodeId{2}, 9));
  EXPECT_TRUE(w.check(NodeId{3}, 9));
}

TEST(Dedup, FarBehindCountsAsSeen) {
  DedupWindow w(1024);
  EXPECT_TRUE(w.check(NodeId{1}, 5000));
  EXPECT_TRUE(w.check(NodeId{1}, 5000 - 1023));
  EXPECT_FALSE(w.check(NodeId{1}, 5000 - 1024));
}

TEST(Dedup, StateStaysBounded) {
  DedupWindow w(64);
  std::mt19937_64 gen(3);
  for (std::uint64_t s = 1; s < 100000; ++s) {
    w.check(NodeId{1}, s + gen() % 32);
    ASSERT_LE(w.tracked(NodeId{1}), 64u);
  }
}

}  // namespace
}  // namespace crowdmr
