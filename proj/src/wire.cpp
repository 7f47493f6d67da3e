#include "bbseg/wire.hpp"

#include <cerrno>
#include <cstring>

#include <sys/socket.h>
#include <unistd.h>

namespace bbseg::wire {

namespace {

void send_all(int fd, const char* data, size_t n) {
  size_t off = 0;
  while (off < n) {
    const ssize_t k = ::send(fd, data + off, n - off, MSG_NOSIGNAL);
    if (k < 0) {
      if (errno == EINTR) continue;
      throw FrameError(FrameError::Kind::Io, std::string("send: ") + std::strerror(errno));
    }
    off += static_cast<size_t>(k);
  }
}

void recv_all(int fd, char* data, size_t n) {
  size_t off = 0;
  while (off < n) {
    const ssize_t k = ::recv(fd, data + off, n - off, 0);
    if (k == 0) throw FrameError(FrameError::Kind::Closed, "peer closed connection");
    if (k < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK)
        throw FrameError(FrameError::Kind::Timeout, "receive timeout");
      throw FrameError(FrameError::Kind::Io, std::string("recv: ") + std::strerror(errno));
    }
    off += static_cast<size_t>(k);
  }
}

}  // namespace

std::string encode_frame(const std::string& body) {
  const uint32_t n = static_cast<uint32_t>(body.size());
  std::string out;
  out.reserve(body.size() + 4);
  out.push_back(static_cast<char>((n >> 24) & 0xff));
  out.push_back(static_cast<char>((n >> 16) & 0xff));
  out.push_back(static_cast<char>((n >> 8) & 0xff));
  out.push_back(static_cast<char>(n & 0xff));
  out.append(body);
  return out;
}

void write_frame(int fd, const std::string& body) {
  if (body.size() > kMaxFrameBytes)
    throw FrameError(FrameError::Kind::Oversize, "frame exceeds 64 MiB");
  const std::string framed = encode_frame(body);
  send_all(fd, framed.data(), framed.size());
}

uint32_t read_frame_length(int fd) {
  unsigned char b[4];
  recv_all(fd, reinterpret_cast<char*>(b), 4);
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

std::string read_frame_body(int fd, uint32_t length) {
  std::string body(length, '\0');
  recv_all(fd, body.data(), length);
  return body;
}

std::string read_frame(int fd) {
  const uint32_t length = read_frame_length(fd);
  if (length > kMaxFrameBytes)
    throw FrameError(FrameError::Kind::Oversize, "incoming frame exceeds 64 MiB");
  return read_frame_body(fd, length);
}

}  // namespace bbseg::wire
