#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "bbseg/domain.hpp"
#include "bbseg/tensor.hpp"

namespace bbseg {

// Connection descriptor. The training side only ever sees this plus the
// TeacherClient interface; the generative source parameters stay behind it.
struct TeacherEndpoint {
  enum class Kind { InProcess, Remote };

  Kind kind = Kind::InProcess;
  std::string host = "127.0.0.1";
  int port = 0;
  int timeout_ms = 5000;
};

nlohmann::json teacher_endpoint_to_json(const TeacherEndpoint& ep);
TeacherEndpoint teacher_endpoint_from_json(const nlohmann::json& j);

class TeacherError : public std::runtime_error {
 public:
  enum class Kind { Timeout, Malformed, Simplex, Remote, Io };

  TeacherError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Exact class posterior of the source generative model, in log space with
// per-pixel max subtraction. Throws on non-finite features (identifying the
// pixel) and on feature_dim mismatch.
ProbabilityMap bayes_posterior(const FeatureMap& features, const DomainSpec& source_spec);

// The one capability a trainer gets: features in, per-pixel probabilities out.
class TeacherClient {
 public:
  virtual ~TeacherClient() = default;
  virtual ProbabilityMap predict(const FeatureMap& features) = 0;
};

class InProcessTeacher : public TeacherClient {
 public:
  explicit InProcessTeacher(DomainSpec source_spec);
  ProbabilityMap predict(const FeatureMap& features) override;

 private:
  DomainSpec spec_;
};

// Blocking client over the framed TCP protocol; one in-flight request per
// connection. Connects lazily on first predict.
class RemoteTeacher : public TeacherClient {
 public:
  explicit RemoteTeacher(const TeacherEndpoint& endpoint);
  ~RemoteTeacher() override;

  RemoteTeacher(const RemoteTeacher&) = delete;
  RemoteTeacher& operator=(const RemoteTeacher&) = delete;

  ProbabilityMap predict(const FeatureMap& features) override;

 private:
  void connect();
  void close_socket();

  TeacherEndpoint endpoint_;
  int fd_ = -1;
  int64_t next_request_id_ = 1;
};

// For in-process endpoints the source spec must be supplied by the harness;
// remote endpoints need none (the source parameters live on the serving side).
std::unique_ptr<TeacherClient> make_teacher_client(const TeacherEndpoint& endpoint,
                                                   const DomainSpec* source_spec);

// Framed-JSON TCP service answering predict requests with the Bayes
// posterior. Stateless per request; one thread per connection.
class TeacherServer {
 public:
  // Binds immediately (port 0 picks an ephemeral port); throws on failure.
  TeacherServer(DomainSpec source_spec, int port);
  ~TeacherServer();

  TeacherServer(const TeacherServer&) = delete;
  TeacherServer& operator=(const TeacherServer&) = delete;

  int port() const { return port_; }
  void stop();

 private:
  void accept_loop();
  void serve_connection(int fd);
  std::string handle_request(const std::string& body) const;

  DomainSpec spec_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> running_{false};
  std::thread accept_thread_;

  std::mutex workers_mu_;
  std::vector<std::thread> workers_;
  std::mutex conn_mu_;
  std::set<int> conn_fds_;
};

}  // namespace bbseg
