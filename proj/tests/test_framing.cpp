#include <gtest/gtest.h>

#include <random>

#include "hivegate/message/framing.hpp"
#include "hivegate/message/message.hpp"

using namespace hivegate;

namespace {

std::vector<HttpFrame> parse_all(std::string_view bytes) {
  FramingState st;
  return assemble(bytes, st);
}

std::vector<HttpFrame> parse_fragments(const std::vector<std::string>& fragments) {
  FramingState st;
  std::vector<HttpFrame> out;
  for (const auto& f : fragments) {
    auto got = assemble(f, st);
    out.insert(out.end(), got.begin(), got.end());
  }
  return out;
}

std::string random_token(std::mt19937_64& rng, std::size_t min_len, std::size_t max_len) {
  static const std::string alphabet = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-";
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::string s(len(rng), 'x');
  for (auto& c : s) c = alphabet[pick(rng)];
  if (s.front() == '-') s.front() = 'h';
  return s;
}

// Canonical random frame: Content-Length present iff the body is non-empty,
// values free of leading/trailing whitespace.
HttpFrame random_frame(std::mt19937_64& rng) {
  HttpFrame f;
  std::bernoulli_distribution coin(0.5);
  f.start.is_response = coin(rng);
  if (f.start.is_response) {
    f.start.status = std::uniform_int_distribution<int>(100, 599)(rng);
    f.start.reason = random_token(rng, 0, 12);
  } else {
    static const char* methods[] = {"GET", "POST", "PUT", "DELETE", "PATCH"};
    f.start.method = methods[std::uniform_int_distribution<int>(0, 4)(rng)];
    f.start.target = "/" + random_token(rng, 0, 20);
  }
  int nheaders = std::uniform_int_distribution<int>(0, 6)(rng);
  for (int i = 0; i < nheaders; ++i) {
    auto name = "X-" + random_token(rng, 1, 10);
    if (iequals(name, "Content-Length") || iequals(name, "Transfer-Encoding")) continue;
    f.headers.add(name, random_token(rng, 0, 30));
  }
  std::uniform_int_distribution<int> byte(0, 255);
  std::string body(std::uniform_int_distribution<std::size_t>(0, 300)(rng), '\0');
  for (auto& c : body) c = static_cast<char>(byte(rng));
  if (!body.empty()) f.headers.add("Content-Length", std::to_string(body.size()));
  f.body = std::move(body);
  return f;
}

}  // namespace

TEST(Framing, SingleCompleteMessage) {
  auto frames = parse_all("POST /x HTTP/1.1\r\nContent-Length: 3\r\n\r\nabc");
  ASSERT_EQ(frames.size(), 1u);
  EXPECT_EQ(frames[0].start.method, "POST");
  EXPECT_EQ(frames[0].start.target, "/x");
  EXPECT_EQ(frames[0].body, "abc");
}

TEST(Framing, BodylessRequestHasEmptyPayload) {
  auto frames = parse_all("GET /x HTTP/1.1\r\n\r\n");
  ASSERT_EQ(frames.size(), 1u);
  Message m(1, Route("a", "b", Direction::Request), frames[0]);
  EXPECT_EQ(m.size(), 0u);
}

TEST(Framing, EverySplitPointYieldsTheSameMessage) {
  const std::string bytes = "POST /x HTTP/1.1\r\nContent-Length: 3\r\n\r\nabc";
  const auto whole = parse_all(bytes);
  ASSERT_EQ(whole.size(), 1u);
  for (std::size_t cut = 0; cut <= bytes.size(); ++cut) {
    FramingState st;
    auto first = assemble(bytes.substr(0, cut), st);
    auto second = assemble(bytes.substr(cut), st);
    if (cut < bytes.size()) EXPECT_TRUE(first.empty()) << "cut " << cut;
    first.insert(first.end(), second.begin(), second.end());
    EXPECT_EQ(first, whole) << "cut " << cut;
  }
}

TEST(Framing, RandomPartitionsOfMessageStreamsAreSplitInvariant) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<HttpFrame> frames;
    std::string stream;
    int n = std::uniform_int_distribution<int>(1, 4)(rng);
    for (int i = 0; i < n; ++i) {
      frames.push_back(random_frame(rng));
      stream += serialize(frames.back());
    }
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (pos < stream.size()) {
      auto len = std::uniform_int_distribution<std::size_t>(1, 40)(rng);
      parts.push_back(stream.substr(pos, len));
      pos += len;
    }
    EXPECT_EQ(parse_fragments(parts), parse_all(stream));
    EXPECT_EQ(parse_all(stream), frames);
  }
}

TEST(Framing, LeftoverBytesStayBuffered) {
  FramingState st;
  auto out = assemble("GET /a HTTP/1.1\r\n\r\nGET /b HT", st);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(st.buffered(), 9u);
  out = assemble("TP/1.1\r\n\r\n", st);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].start.target, "/b");
}

TEST(Framing, LineFeedOnlyIsAccepted) {
  auto frames = parse_all("POST /x HTTP/1.1\nContent-Length: 2\n\nhi");
  ASSERT_EQ(frames.size(), 1u);
  EXPECT_EQ(frames[0].body, "hi");
}

TEST(Framing, RejectsChunkedTransferEncoding) {
  FramingState st;
  try {
    assemble("POST /x HTTP/1.1\r\nTransfer-Encoding: chunked\r\n\r\n3\r\nabc\r\n0\r\n\r\n", st);
    FAIL() << "expected MalformedFraming";
  } catch (const FramingError& e) {
    EXPECT_EQ(e.kind(), FramingError::Kind::Malformed);
  }
  EXPECT_TRUE(st.failed());
}

TEST(Framing, RejectsNonNumericContentLength) {
  for (const char* bad : {"abc", "-1", "1 2", "", "0x10"}) {
    FramingState st;
    std::string msg = std::string("POST /x HTTP/1.1\r\nContent-Length: ") + bad + "\r\n\r\n";
    EXPECT_THROW(assemble(msg, st), FramingError) << bad;
  }
}

TEST(Framing, RejectsBadStartLines) {
  for (const char* bad : {"GARBAGE\r\n\r\n", "GET /x\r\n\r\n", "GET /x HTTP/2.0\r\n\r\n",
                          "HTTP/1.1 abc OK\r\n\r\n", "G@T /x HTTP/1.1\r\n\r\n"}) {
    FramingState st;
    EXPECT_THROW(assemble(bad, st), FramingError) << bad;
  }
}

TEST(Framing, BodyTooLargeIsDistinguished) {
  FramingState st(FramingLimits{1024, 64 * 1024});
  try {
    assemble("POST /x HTTP/1.1\r\nContent-Length: 1025\r\n\r\n", st);
    FAIL();
  } catch (const FramingError& e) {
    EXPECT_EQ(e.kind(), FramingError::Kind::BodyTooLarge);
  }
}

TEST(Framing, DefaultPayloadLimitIs64MiB) {
  FramingState st;
  EXPECT_THROW(assemble("POST /x HTTP/1.1\r\nContent-Length: 67108865\r\n\r\n", st), FramingError);
  FramingState ok;
  EXPECT_NO_THROW(assemble("POST /x HTTP/1.1\r\nContent-Length: 67108864\r\n\r\n", ok));
}

TEST(Framing, ParsesResponses) {
  auto frames = parse_all("HTTP/1.1 404 Not Found\r\nContent-Length: 4\r\n\r\nnope");
  ASSERT_EQ(frames.size(), 1u);
  EXPECT_TRUE(frames[0].start.is_response);
  EXPECT_EQ(frames[0].start.status, 404);
  EXPECT_EQ(frames[0].start.reason, "Not Found");
}

TEST(Serialize, EmptyPayloadReparsesToSizeZero) {
  Message m(1, Route("a", "b", Direction::Request), parse_all("GET /x HTTP/1.1\r\nHost: b\r\n\r\n")[0]);
  m.transition(MessageState::Forwarding);
  auto again = parse_all(serialize(m));
  ASSERT_EQ(again.size(), 1u);
  EXPECT_EQ(again[0].body.size(), 0u);
}

TEST(Serialize, RoundTripsRandomMessages) {
  std::mt19937_64 rng(42);
  for (int i = 0; i < 1000; ++i) {
    auto frame = random_frame(rng);
    Message m(static_cast<MessageId>(i), Route("a", "b", Direction::Request), frame);
    m.transition(MessageState::Forwarding);
    auto parsed = parse_all(serialize(m));
    ASSERT_EQ(parsed.size(), 1u);
    EXPECT_EQ(parsed[0], m.frame()) << "message " << i;
  }
}

TEST(Serialize, ContentLengthFollowsTransformedPayload) {
  auto frame = parse_all("POST /img HTTP/1.1\r\nContent-Length: 100\r\n\r\n" + std::string(100, 'x'))[0];
  Message m(1, Route("a", "b", Direction::Request), frame);
  m.transition(MessageState::InProgress);
  m.set_payload(std::string(40, 'y'));
  m.transition(MessageState::Queued);
  m.transition(MessageState::Forwarding);
  auto reparsed = parse_all(serialize(m));
  ASSERT_EQ(reparsed.size(), 1u);
  EXPECT_EQ(reparsed[0].headers.get("Content-Length").value(), "40");
  EXPECT_EQ(reparsed[0].body, std::string(40, 'y'));
}

TEST(Serialize, RequiresForwardingState) {
  Message m(1, Route("a", "b", Direction::Request), parse_all("GET / HTTP/1.1\r\n\r\n")[0]);
  EXPECT_THROW(serialize(m), std::logic_error);
}

TEST(MessageModel, StateMachineFollowsLifecycle) {
  using S = MessageState;
  EXPECT_TRUE(transition_allowed(S::Assembling, S::Queued));
  EXPECT_TRUE(transition_allowed(S::Queued, S::InProgress));
  EXPECT_TRUE(transition_allowed(S::InProgress, S::Queued));
  EXPECT_TRUE(transition_allowed(S::Queued, S::Forwarding));
  EXPECT_TRUE(transition_allowed(S::Forwarding, S::Forwarded));
  EXPECT_TRUE(transition_allowed(S::InProgress, S::Dropped));
  EXPECT_FALSE(transition_allowed(S::InProgress, S::Forwarding));
  EXPECT_FALSE(transition_allowed(S::Forwarding, S::Dropped));
  EXPECT_FALSE(transition_allowed(S::Forwarded, S::Queued));
  EXPECT_FALSE(transition_allowed(S::Dropped, S::Queued));
}

TEST(MessageModel, FrozenOnceForwarding) {
  Message m(1, Route("a", "b", Direction::Request), parse_all("GET / HTTP/1.1\r\n\r\n")[0]);
  m.transition(MessageState::Forwarding);
  EXPECT_THROW(m.set_payload("x"), std::logic_error);
  EXPECT_THROW(m.set_header("A", "b"), std::logic_error);
}

TEST(RouteModel, EqualityAndInvariants) {
  EXPECT_THROW(Route("a", "a", Direction::Request), std::invalid_argument);
  EXPECT_EQ(Route("a", "b", Direction::Request), Route("a", "b", Direction::Request));
  EXPECT_NE(Route("a", "b", Direction::Request), Route("a", "b", Direction::Response));
  EXPECT_EQ(Route("a", "b", Direction::Request).reversed(), Route("b", "a", Direction::Response));
}

TEST(Headers, CaseInsensitiveLookupKeepsCasing) {
  Headers h;
  h.add("X-Resolution", "1080p");
  EXPECT_EQ(h.get("x-resolution").value(), "1080p");
  h.set("x-RESOLUTION", "360p");
  ASSERT_EQ(h.size(), 1u);
  EXPECT_EQ(h.begin()->first, "X-Resolution");
  EXPECT_EQ(h.get("X-Resolution").value(), "360p");
}
