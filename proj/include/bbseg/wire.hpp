#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace bbseg::wire {

// Framing: 4-byte big-endian unsigned length, then a UTF-8 JSON body.
constexpr size_t kMaxFrameBytes = 64ull << 20;  // 64 MiB

class FrameError : public std::runtime_error {
 public:
  enum class Kind { Timeout, Closed, Oversize, Io };

  FrameError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::string encode_frame(const std::string& body);

// Blocking send of one frame on a connected socket.
void write_frame(int fd, const std::string& body);

// Blocking read of one frame. Honors the socket's receive timeout
// (FrameError::Kind::Timeout) and the 64 MiB cap (Kind::Oversize).
std::string read_frame(int fd);

// Reads only the 4-byte prefix; used by the server to reject oversize
// frames before attempting to buffer them.
uint32_t read_frame_length(int fd);
std::string read_frame_body(int fd, uint32_t length);

}  // namespace bbseg::wire
