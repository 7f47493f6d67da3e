#include "bbseg/teacher.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <limits>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "bbseg/wire.hpp"

namespace bbseg {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

void set_socket_timeout(int fd, int timeout_ms) {
  timeval tv{};
  tv.tv_sec = timeout_ms / 1000;
  tv.tv_usec = (timeout_ms % 1000) * 1000;
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
  ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
}

std::string error_body(int64_t request_id, const std::string& code, const std::string& message) {
  return nlohmann::json{{"type", "error"},
                        {"request_id", request_id},
                        {"code", code},
                        {"message", message}}
      .dump();
}

}  // namespace

nlohmann::json teacher_endpoint_to_json(const TeacherEndpoint& ep) {
  if (ep.kind == TeacherEndpoint::Kind::InProcess) return nlohmann::json{{"kind", "in-process"}};
  return nlohmann::json{
      {"kind", "remote"}, {"host", ep.host}, {"port", ep.port}, {"timeout_ms", ep.timeout_ms}};
}

TeacherEndpoint teacher_endpoint_from_json(const nlohmann::json& j) {
  TeacherEndpoint ep;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "in-process") {
    ep.kind = TeacherEndpoint::Kind::InProcess;
  } else if (kind == "remote") {
    ep.kind = TeacherEndpoint::Kind::Remote;
    ep.host = j.at("host").get<std::string>();
    ep.port = j.at("port").get<int>();
    ep.timeout_ms = j.at("timeout_ms").get<int>();
  } else {
    throw std::invalid_argument("unknown teacher endpoint kind: " + kind);
  }
  return ep;
}

ProbabilityMap bayes_posterior(const FeatureMap& features, const DomainSpec& source_spec) {
  const int c = source_spec.num_classes, d = source_spec.feature_dim;
  if (features.d != d)
    throw std::invalid_argument("bayes_posterior: feature_dim mismatch");

  // Precompute log priors and per-class log normalizers.
  std::vector<double> log_prior(c), log_norm(c), inv_std(static_cast<size_t>(c) * d);
  for (int k = 0; k < c; ++k) {
    log_prior[k] = std::log(source_spec.class_priors[k]);  // -inf for zero priors
    double norm = 0.0;
    for (int j = 0; j < d; ++j) {
      const double sd = source_spec.stddev(k, j);
      norm -= std::log(sd) + 0.5 * kLogTwoPi;
      inv_std[static_cast<size_t>(k) * d + j] = 1.0 / sd;
    }
    log_norm[k] = norm;
  }

  ProbabilityMap out(c, features.h, features.w);
  std::vector<double> log_q(c);
  const size_t plane = out.plane();
  for (size_t i = 0; i < features.pixels(); ++i) {
    const double* x = &features.data[i * d];
    for (int j = 0; j < d; ++j) {
      if (!std::isfinite(x[j]))
        throw std::invalid_argument("bayes_posterior: non-finite feature at pixel " +
                                    std::to_string(i) + " channel " + std::to_string(j));
    }
    double max_log = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < c; ++k) {
      double acc = log_prior[k] + log_norm[k];
      const double* mu = &source_spec.class_means[static_cast<size_t>(k) * d];
      const double* is = &inv_std[static_cast<size_t>(k) * d];
      for (int j = 0; j < d; ++j) {
        const double z = (x[j] - mu[j]) * is[j];
        acc -= 0.5 * z * z;
      }
      log_q[k] = acc;
      max_log = std::max(max_log, acc);
    }
    double sum = 0.0;
    for (int k = 0; k < c; ++k) {
      log_q[k] = std::exp(log_q[k] - max_log);
      sum += log_q[k];
    }
    const double inv_sum = 1.0 / sum;
    for (int k = 0; k < c; ++k) out.data[static_cast<size_t>(k) * plane + i] = log_q[k] * inv_sum;
  }
  return out;
}

InProcessTeacher::InProcessTeacher(DomainSpec source_spec) : spec_(std::move(source_spec)) {
  spec_.validate();
}

ProbabilityMap InProcessTeacher::predict(const FeatureMap& features) {
  return bayes_posterior(features, spec_);
}

// ---------------------------------------------------------------------------
// protocol bodies
// ---------------------------------------------------------------------------

namespace wire_json {

std::string encode_predict_request(int64_t request_id, const FeatureMap& features) {
  nlohmann::json j{{"type", "predict"},
                   {"request_id", request_id},
                   {"h", features.h},
                   {"w", features.w},
                   {"d", features.d},
                   {"features", features.data}};
  return j.dump();
}

}  // namespace wire_json

// ---------------------------------------------------------------------------
// RemoteTeacher
// ---------------------------------------------------------------------------

RemoteTeacher::RemoteTeacher(const TeacherEndpoint& endpoint) : endpoint_(endpoint) {
  if (endpoint.kind != TeacherEndpoint::Kind::Remote)
    throw std::invalid_argument("RemoteTeacher requires a remote endpoint");
}

RemoteTeacher::~RemoteTeacher() { close_socket(); }

void RemoteTeacher::close_socket() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void RemoteTeacher::connect() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw TeacherError(TeacherError::Kind::Io, "socket() failed");

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<uint16_t>(endpoint_.port));
  if (::inet_pton(AF_INET, endpoint_.host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw TeacherError(TeacherError::Kind::Io, "bad teacher host: " + endpoint_.host);
  }

  set_socket_timeout(fd, endpoint_.timeout_ms);
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    const int err = errno;
    ::close(fd);
    // Unreachable and refused endpoints surface as the timeout condition:
    // the caller sees "teacher not answering", never a partial result.
    throw TeacherError(TeacherError::Kind::Timeout,
                       std::string("teacher endpoint unreachable: ") + std::strerror(err));
  }
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  fd_ = fd;
}

ProbabilityMap RemoteTeacher::predict(const FeatureMap& features) {
  if (fd_ < 0) connect();
  const int64_t request_id = next_request_id_++;

  try {
    wire::write_frame(fd_, wire_json::encode_predict_request(request_id, features));
    const std::string body = wire::read_frame(fd_);

    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw TeacherError(TeacherError::Kind::Malformed,
                         std::string("unparseable response: ") + e.what());
    }

    const std::string type = j.value("type", "");
    if (type == "error") {
      throw TeacherError(TeacherError::Kind::Remote,
                         "teacher error [" + j.value("code", "?") + "]: " + j.value("message", ""));
    }
    if (type != "result" || !j.contains("request_id") || !j.contains("c") || !j.contains("probs"))
      throw TeacherError(TeacherError::Kind::Malformed, "response missing required fields");
    if (j.at("request_id").get<int64_t>() != request_id)
      throw TeacherError(TeacherError::Kind::Malformed, "response id does not match request");

    const int c = j.at("c").get<int>();
    ProbabilityMap out(c, features.h, features.w);
    const auto& probs = j.at("probs");
    if (c < 2 || probs.size() != out.data.size())
      throw TeacherError(TeacherError::Kind::Malformed, "probs shape mismatch");
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = probs[i].get<double>();

    // Simplex check: nonnegative, finite, per-pixel sums within 1e-9 of 1.
    const size_t plane = out.plane();
    for (size_t i = 0; i < plane; ++i) {
      double sum = 0.0;
      for (int k = 0; k < c; ++k) {
        const double p = out.data[static_cast<size_t>(k) * plane + i];
        if (!std::isfinite(p) || p < 0.0)
          throw TeacherError(TeacherError::Kind::Simplex,
                             "invalid probability at pixel " + std::to_string(i));
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9)
        throw TeacherError(TeacherError::Kind::Simplex,
                           "probabilities at pixel " + std::to_string(i) + " sum to " +
                               std::to_string(sum));
    }
    return out;
  } catch (const wire::FrameError& e) {
    close_socket();
    if (e.kind() == wire::FrameError::Kind::Timeout)
      throw TeacherError(TeacherError::Kind::Timeout, e.what());
    throw TeacherError(TeacherError::Kind::Io, e.what());
  } catch (...) {
    close_socket();
    throw;
  }
}

std::unique_ptr<TeacherClient> make_teacher_client(const TeacherEndpoint& endpoint,
                                                   const DomainSpec* source_spec) {
  if (endpoint.kind == TeacherEndpoint::Kind::InProcess) {
    if (source_spec == nullptr)
      throw std::invalid_argument("in-process teacher requires a source spec");
    return std::make_unique<InProcessTeacher>(*source_spec);
  }
  return std::make_unique<RemoteTeacher>(endpoint);
}

// ---------------------------------------------------------------------------
// TeacherServer
// ---------------------------------------------------------------------------

TeacherServer::TeacherServer(DomainSpec source_spec, int port) : spec_(std::move(source_spec)) {
  spec_.validate();

  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw std::runtime_error("teacher server: socket() failed");
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<uint16_t>(port));
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    const int err = errno;
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw std::runtime_error(std::string("teacher server: bind failed: ") + std::strerror(err));
  }
  if (::listen(listen_fd_, 16) != 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw std::runtime_error("teacher server: listen failed");
  }

  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);

  running_ = true;
  accept_thread_ = std::thread([this] { accept_loop(); });
}

TeacherServer::~TeacherServer() { stop(); }

void TeacherServer::stop() {
  if (!running_.exchange(false)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  listen_fd_ = -1;
  {
    std::lock_guard<std::mutex> lock(conn_mu_);
    for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  if (accept_thread_.joinable()) accept_thread_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard<std::mutex> lock(workers_mu_);
    workers.swap(workers_);
  }
  for (auto& t : workers)
    if (t.joinable()) t.join();
}

void TeacherServer::accept_loop() {
  while (running_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (running_ && (errno == EINTR || errno == ECONNABORTED)) continue;
      break;
    }
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    {
      std::lock_guard<std::mutex> lock(conn_mu_);
      conn_fds_.insert(fd);
    }
    std::lock_guard<std::mutex> lock(workers_mu_);
    workers_.emplace_back([this, fd] {
      serve_connection(fd);
      {
        std::lock_guard<std::mutex> lock2(conn_mu_);
        conn_fds_.erase(fd);
      }
      ::close(fd);
    });
  }
}

void TeacherServer::serve_connection(int fd) {
  while (running_) {
    uint32_t length = 0;
    try {
      length = wire::read_frame_length(fd);
    } catch (const wire::FrameError&) {
      return;  // closed or broken; nothing to answer
    }
    try {
      if (length > wire::kMaxFrameBytes) {
        // Cannot safely resynchronize the stream after refusing the body.
        wire::write_frame(fd, error_body(-1, "shape", "frame exceeds 64 MiB"));
        return;
      }
      const std::string body = wire::read_frame_body(fd, length);
      wire::write_frame(fd, handle_request(body));
    } catch (const wire::FrameError&) {
      return;
    }
  }
}

std::string TeacherServer::handle_request(const std::string& body) const {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    return error_body(-1, "decode", std::string("invalid JSON: ") + e.what());
  }

  int64_t request_id = -1;
  try {
    if (j.contains("request_id")) request_id = j.at("request_id").get<int64_t>();
    if (j.value("type", "") != "predict")
      return error_body(request_id, "decode", "expected type 'predict'");

    const int h = j.at("h").get<int>();
    const int w = j.at("w").get<int>();
    const int d = j.at("d").get<int>();
    const auto& flat = j.at("features");
    if (h < 1 || w < 1 || d < 1 ||
        flat.size() != static_cast<size_t>(h) * static_cast<size_t>(w) * static_cast<size_t>(d))
      return error_body(request_id, "shape", "h*w*d does not match features length");
    if (d != spec_.feature_dim)
      return error_body(request_id, "shape", "feature_dim mismatch with served model");

    FeatureMap features(h, w, d);
    for (size_t i = 0; i < features.data.size(); ++i) features.data[i] = flat[i].get<double>();

    const ProbabilityMap probs = bayes_posterior(features, spec_);
    return nlohmann::json{{"type", "result"},
                          {"request_id", request_id},
                          {"c", probs.c},
                          {"probs", probs.data}}
        .dump();
  } catch (const nlohmann::json::exception& e) {
    return error_body(request_id, "decode", std::string("bad request fields: ") + e.what());
  } catch (const std::exception& e) {
    return error_body(request_id, "internal", e.what());
  }
}

}  // namespace bbseg
