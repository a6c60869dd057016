#include <gtest/gtest.h>

#include <sstream>

#include "crowdmr/domain.hpp"

namespace crowdmr {
namespace {

TEST(ParseCategory, ExactName) { EXPECT_EQ(parse_category("Man"), TagCategory::Man); }

TEST(ParseCategory, CaseInsensitive) {
  EXPECT_EQ(parse_category("other"), TagCategory::Other);
  EXPECT_EQ(parse_category("WOMAN"), TagCategory::Woman);
}

TEST(ParseCategory, RejectsOtherTokens) {
  EXPECT_THROW(parse_category("child"), UnknownCategory);
  EXPECT_THROW(parse_category(""), UnknownCategory);
  EXPECT_THROW(parse_category("Man "), UnknownCategory);
}

TEST(ParseCategory, NamesRoundTrip) {
  for (auto c : kAllCategories) EXPECT_EQ(parse_category(category_name(c)), c);
}

TEST(CompositeKeyText, Tally500Spellings) {
  EXPECT_EQ(composite_key_text({TagCategory::Woman, RoomId{0}}), "Woman-room0");
  EXPECT_EQ(composite_key_text({TagCategory::Other, RoomId{5}}), "Other-room5");
  EXPECT_EQ(composite_key_text({TagCategory::Man, RoomId{3}}), "Man-room3");
}

TEST(CompositeKeyText, ParseIsInverse) {
  for (auto c : kAllCategories) {
    for (std::uint32_t r : {0u, 1u, 9u, 10u, 63u, 4000000000u}) {
      CompositeKey k{c, RoomId{r}};
      EXPECT_EQ(parse_composite_key(composite_key_text(k)), k);
    }
  }
}

TEST(CompositeKeyText, ParseRejectsMalformed) {
  for (const char* bad : {"", "Man", "Man-room", "Man-room01", "Man-room-1", "Child-room0",
                          "Man-room0x", "Man-room99999999999", "-room0"}) {
    EXPECT_THROW(parse_composite_key(bad), MalformedKey) << bad;
  }
}

TEST(CompositeKey, OrdersByCategoryThenRoom) {
  CompositeKey a{TagCategory::Man, RoomId{5}};
  CompositeKey b{TagCategory::Woman, RoomId{0}};
  EXPECT_LT(a, b);
  EXPECT_LT((CompositeKey{TagCategory::Man, RoomId{1}}), (CompositeKey{TagCategory::Man, RoomId{2}}));
}

TEST(ParseU64, StrictDecimal) {
  std::uint64_t v = 0;
  EXPECT_TRUE(detail::parse_u64("18446744073709551615", v));
  EXPECT_EQ(v, UINT64_MAX);
  EXPECT_FALSE(detail::parse_u64("18446744073709551616", v));
  EXPECT_FALSE(detail::parse_u64("", v));
  EXPECT_FALSE(detail::parse_u64("+1", v));
  EXPECT_FALSE(detail::parse_u64(" 1", v));
}

TEST(Streaming, Operators) {
  std::ostringstream os;
  os << TagCategory::Woman << ' ' << NodeId{4} << ' ' << RoomId{2} << ' '
     << CompositeKey{TagCategory::Other, RoomId{1}};
  EXPECT_EQ(os.str(), "Woman 4 room2 Other-room1");
}

}  // namespace
}  // namespace crowdmr
