#include <doctest.h>

#include <cmath>
#include <cstring>
#include <string>
#include <thread>
#include <vector>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "bbseg/rng.hpp"
#include "bbseg/teacher.hpp"
#include "bbseg/wire.hpp"

using namespace bbseg;

namespace {

DomainSpec small_spec() {
  DomainSpec s;
  s.num_classes = 3;
  s.feature_dim = 2;
  s.class_means = {0.0, 0.0, 2.0, 1.0, -1.0, 3.0};
  s.class_stddevs = {0.8, 1.2, 0.6, 0.9, 1.1, 0.7};
  s.class_priors = {0.5, 0.3, 0.2};
  s.seed = 17;
  return s;
}

FeatureMap random_features(int h, int w, int d, uint64_t seed) {
  FeatureMap f(h, w, d);
  Rng rng(seed);
  for (double& v : f.data) v = rng.next_normal() * 2.0;
  return f;
}

// Direct density-ratio posterior: no logs, no max subtraction.
double direct_posterior(const DomainSpec& s, const double* x, int k) {
  auto density = [&](int cls) {
    double p = s.class_priors[cls];
    for (int j = 0; j < s.feature_dim; ++j) {
      const double mu = s.mean(cls, j), sd = s.stddev(cls, j);
      const double z = (x[j] - mu) / sd;
      p *= std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * M_PI));
    }
    return p;
  };
  double total = 0.0;
  for (int c = 0; c < s.num_classes; ++c) total += density(c);
  return density(k) / total;
}

int connect_to(int port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(fd >= 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<uint16_t>(port));
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
  return fd;
}

// One-shot fake teacher that answers the first request with a fixed body.
int serve_once(const std::string& response_body, std::thread& out_thread) {
  const int lfd = ::socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(lfd >= 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  REQUIRE(::bind(lfd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
  REQUIRE(::listen(lfd, 1) == 0);
  socklen_t len = sizeof(addr);
  ::getsockname(lfd, reinterpret_cast<sockaddr*>(&addr), &len);
  const int port = ntohs(addr.sin_port);
  out_thread = std::thread([lfd, response_body] {
    const int fd = ::accept(lfd, nullptr, nullptr);
    if (fd >= 0) {
      try {
        wire::read_frame(fd);
        wire::write_frame(fd, response_body);
      } catch (...) {
      }
      ::close(fd);
    }
    ::close(lfd);
  });
  return port;
}

}  // namespace

TEST_CASE("posterior matches the direct density ratio") {
  const DomainSpec s = small_spec();
  const FeatureMap f = random_features(4, 4, 2, 99);
  const ProbabilityMap q = bayes_posterior(f, s);
  for (size_t i = 0; i < f.pixels(); ++i) {
    for (int k = 0; k < s.num_classes; ++k) {
      const double want = direct_posterior(s, f.pixel(i / 4, i % 4), k);
      CHECK(std::abs(q.data[static_cast<size_t>(k) * q.plane() + i] - want) <= 1e-12);
    }
  }
}

TEST_CASE("symmetric classes split an equidistant feature evenly") {
  DomainSpec s;
  s.num_classes = 2;
  s.feature_dim = 1;
  s.class_means = {-1.5, 1.5};
  s.class_stddevs = {0.7, 0.7};
  s.class_priors = {0.5, 0.5};
  FeatureMap f(1, 1, 1);
  f.data[0] = 0.0;
  const ProbabilityMap q = bayes_posterior(f, s);
  CHECK(q.data[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(q.data[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("a feature at a well-separated class mean is near-certain") {
  DomainSpec s;
  s.num_classes = 2;
  s.feature_dim = 1;
  s.class_means = {0.0, 10.0};  // 10 sigma apart
  s.class_stddevs = {1.0, 1.0};
  s.class_priors = {0.5, 0.5};
  FeatureMap f(1, 1, 1);
  f.data[0] = 10.0;
  const ProbabilityMap q = bayes_posterior(f, s);
  CHECK(q.data[q.plane()] > 0.999);
}

TEST_CASE("per-pixel distributions satisfy the simplex invariant") {
  const DomainSpec s = small_spec();
  const FeatureMap f = random_features(8, 8, 2, 7);
  const ProbabilityMap q = bayes_posterior(f, s);
  for (size_t i = 0; i < q.plane(); ++i) {
    double sum = 0.0;
    for (int k = 0; k < s.num_classes; ++k) {
      const double p = q.data[static_cast<size_t>(k) * q.plane() + i];
      CHECK(p >= 0.0);
      sum += p;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
}

TEST_CASE("non-finite features are rejected with the pixel named") {
  const DomainSpec s = small_spec();
  FeatureMap f = random_features(2, 2, 2, 3);
  f.data[1 * 2 + 1] = std::nan("");  // pixel 1, channel 1
  try {
    bayes_posterior(f, s);
    FAIL("expected invalid_argument");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("pixel 1") != std::string::npos);
  }
  FeatureMap wrong(2, 2, 3);
  CHECK_THROWS_AS(bayes_posterior(wrong, s), std::invalid_argument);
}

TEST_CASE("in-process client delegates to the posterior") {
  const DomainSpec s = small_spec();
  const FeatureMap f = random_features(3, 5, 2, 21);
  InProcessTeacher t(s);
  CHECK(t.predict(f).data == bayes_posterior(f, s).data);
}

TEST_CASE("remote and in-process teachers agree") {
  const DomainSpec s = small_spec();
  TeacherServer server(s, 0);
  TeacherEndpoint ep;
  ep.kind = TeacherEndpoint::Kind::Remote;
  ep.port = server.port();
  auto remote = make_teacher_client(ep, nullptr);
  auto local = make_teacher_client(TeacherEndpoint{}, &s);

  const FeatureMap f = random_features(6, 6, 2, 5);
  const ProbabilityMap a = remote->predict(f);
  const ProbabilityMap b = local->predict(f);
  REQUIRE(a.data.size() == b.data.size());
  for (size_t i = 0; i < a.data.size(); ++i) CHECK(std::abs(a.data[i] - b.data[i]) <= 1e-12);
  server.stop();
}

TEST_CASE("two concurrent clients get uncorrupted answers") {
  const DomainSpec s = small_spec();
  TeacherServer server(s, 0);
  TeacherEndpoint ep;
  ep.kind = TeacherEndpoint::Kind::Remote;
  ep.port = server.port();

  auto worker = [&](uint64_t seed, bool* ok) {
    RemoteTeacher client(ep);
    for (int it = 0; it < 8; ++it) {
      const FeatureMap f = random_features(5, 4, 2, seed + it);
      const ProbabilityMap got = client.predict(f);
      const ProbabilityMap want = bayes_posterior(f, s);
      for (size_t i = 0; i < got.data.size(); ++i)
        if (std::abs(got.data[i] - want.data[i]) > 1e-12) {
          *ok = false;
          return;
        }
    }
    *ok = true;
  };
  bool ok1 = false, ok2 = false;
  std::thread t1(worker, 100, &ok1), t2(worker, 200, &ok2);
  t1.join();
  t2.join();
  CHECK(ok1);
  CHECK(ok2);
  server.stop();
}

TEST_CASE("a hundred sequential predictions echo their request ids") {
  const DomainSpec s = small_spec();
  TeacherServer server(s, 0);
  const int fd = connect_to(server.port());
  const FeatureMap f = random_features(2, 2, 2, 1);
  for (int id = 1; id <= 100; ++id) {
    nlohmann::json req{{"type", "predict"}, {"request_id", id},      {"h", f.h},
                       {"w", f.w},          {"d", f.d},              {"features", f.data}};
    wire::write_frame(fd, req.dump());
    const nlohmann::json resp = nlohmann::json::parse(wire::read_frame(fd));
    CHECK(resp.at("type") == "result");
    CHECK(resp.at("request_id").get<int>() == id);
  }
  ::close(fd);
  server.stop();
}

TEST_CASE("garbage frames get a decode error and the connection survives") {
  const DomainSpec s = small_spec();
  TeacherServer server(s, 0);
  const int fd = connect_to(server.port());

  wire::write_frame(fd, "this is not json{{{");
  nlohmann::json err = nlohmann::json::parse(wire::read_frame(fd));
  CHECK(err.at("type") == "error");
  CHECK(err.at("code") == "decode");

  // Valid request on the same connection still answered.
  const FeatureMap f = random_features(2, 3, 2, 8);
  nlohmann::json req{{"type", "predict"}, {"request_id", 7}, {"h", f.h},
                     {"w", f.w},          {"d", f.d},        {"features", f.data}};
  wire::write_frame(fd, req.dump());
  const nlohmann::json resp = nlohmann::json::parse(wire::read_frame(fd));
  CHECK(resp.at("type") == "result");
  CHECK(resp.at("request_id").get<int>() == 7);
  ::close(fd);
  server.stop();
}

TEST_CASE("shape violations get a shape error") {
  const DomainSpec s = small_spec();
  TeacherServer server(s, 0);
  const int fd = connect_to(server.port());
  nlohmann::json req{{"type", "predict"}, {"request_id", 3}, {"h", 2},
                     {"w", 2},            {"d", 2},          {"features", {1.0, 2.0}}};
  wire::write_frame(fd, req.dump());
  const nlohmann::json resp = nlohmann::json::parse(wire::read_frame(fd));
  CHECK(resp.at("type") == "error");
  CHECK(resp.at("code") == "shape");
  ::close(fd);
  server.stop();
}

TEST_CASE("an unreachable endpoint is a timeout, never a partial result") {
  TeacherEndpoint ep;
  ep.kind = TeacherEndpoint::Kind::Remote;
  ep.port = 1;  // nothing listens here
  ep.timeout_ms = 200;
  RemoteTeacher client(ep);
  const FeatureMap f = random_features(2, 2, 2, 0);
  try {
    client.predict(f);
    FAIL("expected TeacherError");
  } catch (const TeacherError& e) {
    CHECK(e.kind() == TeacherError::Kind::Timeout);
  }
}

TEST_CASE("a malformed response surfaces as the malformed condition") {
  std::thread server_thread;
  const int port = serve_once("not json at all", server_thread);
  TeacherEndpoint ep;
  ep.kind = TeacherEndpoint::Kind::Remote;
  ep.port = port;
  RemoteTeacher client(ep);
  const FeatureMap f = random_features(1, 1, 2, 0);
  try {
    client.predict(f);
    FAIL("expected TeacherError");
  } catch (const TeacherError& e) {
    CHECK(e.kind() == TeacherError::Kind::Malformed);
  }
  server_thread.join();
}

TEST_CASE("a simplex-violating response is rejected") {
  const nlohmann::json bad{{"type", "result"},
                           {"request_id", 1},
                           {"c", 2},
                           {"probs", {0.9, 0.9, 0.9, 0.9}}};  // rows sum to 1.8
  std::thread server_thread;
  const int port = serve_once(bad.dump(), server_thread);
  TeacherEndpoint ep;
  ep.kind = TeacherEndpoint::Kind::Remote;
  ep.port = port;
  RemoteTeacher client(ep);
  const FeatureMap f = random_features(1, 2, 2, 0);
  try {
    client.predict(f);
    FAIL("expected TeacherError");
  } catch (const TeacherError& e) {
    CHECK(e.kind() == TeacherError::Kind::Simplex);
  }
  server_thread.join();
}

TEST_CASE("server start, one predict, stop is a clean lifecycle") {
  const DomainSpec s = small_spec();
  auto server = std::make_unique<TeacherServer>(s, 0);
  TeacherEndpoint ep;
  ep.kind = TeacherEndpoint::Kind::Remote;
  ep.port = server->port();
  {
    RemoteTeacher client(ep);
    const FeatureMap f = random_features(2, 2, 2, 4);
    CHECK(client.predict(f).c == s.num_classes);
  }
  server->stop();
  server.reset();  // destructor after stop must be safe
  // Endpoint gone: a fresh client now fails to connect.
  RemoteTeacher late(ep);
  TeacherEndpoint down = ep;
  (void)down;
  const FeatureMap f = random_features(1, 1, 2, 4);
  CHECK_THROWS_AS(late.predict(f), TeacherError);
}

TEST_CASE("endpoint JSON round-trips") {
  TeacherEndpoint ep;
  ep.kind = TeacherEndpoint::Kind::Remote;
  ep.host = "10.0.0.5";
  ep.port = 4242;
  ep.timeout_ms = 1234;
  const TeacherEndpoint back = teacher_endpoint_from_json(teacher_endpoint_to_json(ep));
  CHECK(back.kind == TeacherEndpoint::Kind::Remote);
  CHECK(back.host == ep.host);
  CHECK(back.port == ep.port);
  CHECK(back.timeout_ms == ep.timeout_ms);
  const TeacherEndpoint local = teacher_endpoint_from_json(teacher_endpoint_to_json({}));
  CHECK(local.kind == TeacherEndpoint::Kind::InProcess);
}
