#pragma once

// Checkpoint container: "TRNC", u32 version, u32 length + JSON config echo,
// u32 tensor count, then per tensor (u32 name length, name, u32 rows,
// u32 cols, rows*cols float64), then u8 Adam flag and, if set, u64 step
// followed by the first- and second-moment tensors in the same layout.
// Everything little-endian.

#include <trn/dataio.hpp>
#include <trn/model.hpp>
#include <trn/training.hpp>

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace trn {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json config_to_json(const TrnConfig& c) {
  return {{"appearance_dim", c.appearance_dim}, {"motion_dim", c.motion_dim},
          {"pose_dim", c.pose_dim},             {"fusion", std::string(to_string(c.fusion))},
          {"hidden_size", c.hidden_size},       {"decoder_steps", c.decoder_steps},
          {"num_actions", c.num_actions},       {"seq_len", c.seq_len},
          {"chunk_size", c.chunk_size},         {"fps", c.fps}};
}

inline TrnConfig config_from_json(const nlohmann::json& j) {
  TrnConfig c;
  c.appearance_dim = j.at("appearance_dim").get<std::size_t>();
  c.motion_dim = j.at("motion_dim").get<std::size_t>();
  c.pose_dim = j.at("pose_dim").get<std::size_t>();
  c.fusion = parse_fusion_variant(j.at("fusion").get<std::string>());
  c.hidden_size = j.at("hidden_size").get<std::size_t>();
  c.decoder_steps = j.at("decoder_steps").get<std::size_t>();
  c.num_actions = j.at("num_actions").get<std::size_t>();
  c.seq_len = j.at("seq_len").get<std::size_t>();
  c.chunk_size = j.at("chunk_size").get<std::size_t>();
  c.fps = j.at("fps").get<double>();
  return c;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},       {"seq_len", c.seq_len},
          {"epochs", c.epochs},               {"seed", c.seed},
          {"lambda_encoder", c.lambda_encoder}, {"lambda_decoder", c.lambda_decoder},
          {"beta1", c.beta1},                 {"beta2", c.beta2},
          {"epsilon", c.epsilon}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.seq_len = j.at("seq_len").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.lambda_encoder = j.at("lambda_encoder").get<double>();
  c.lambda_decoder = j.at("lambda_decoder").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.epsilon = j.at("epsilon").get<double>();
  return c;
}

struct Checkpoint {
  TrnConfig config;
  std::optional<TrainConfig> train_config;
  TrnParams<double> params;
  std::optional<AdamState> adam;
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<std::byte>(v)); }
  void u32(std::uint32_t v) { store_u32(bytes_, v); }
  void u64(std::uint64_t v) {
    u32(static_cast<std::uint32_t>(v & 0xffffffffu));
    u32(static_cast<std::uint32_t>(v >> 32));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    for (char c : s) bytes_.push_back(static_cast<std::byte>(c));
  }
  std::vector<std::byte>& bytes() { return bytes_; }

 private:
  std::vector<std::byte> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::byte> b) : b_(b) {}
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw CheckpointError("checkpoint truncated");
  }
  std::uint8_t u8() {
    need(1);
    return std::to_integer<std::uint8_t>(b_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    const auto v = load_u32(b_, pos_);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    const std::uint64_t hi = u32();
    return lo | (hi << 32);
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string text() {
    const std::size_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == b_.size(); }

 private:
  std::span<const std::byte> b_;
  std::size_t pos_ = 0;
};

inline void write_tensors(ByteWriter& w, const TrnParams<double>& p) {
  std::uint32_t count = 0;
  p.for_each([&count](const char*, const Matrix<double>&) { ++count; });
  w.u32(count);
  p.for_each([&w](const char* name, const Matrix<double>& m) {
    w.text(name);
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (double v : m.values()) w.f64(v);
  });
}

inline void read_tensors(ByteReader& r, TrnParams<double>& p) {
  std::uint32_t expected = 0;
  p.for_each([&expected](const char*, const Matrix<double>&) { ++expected; });
  const std::uint32_t count = r.u32();
  if (count != expected) {
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, expected " +
                          std::to_string(expected));
  }
  p.for_each([&r](const char* name, Matrix<double>& m) {
    const std::string got = r.text();
    if (got != name) throw CheckpointError("checkpoint tensor '" + got + "' where '" + name + "' expected");
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (rows != m.rows() || cols != m.cols()) {
      throw CheckpointError("checkpoint tensor '" + got + "' has shape [" + std::to_string(rows) + "x" +
                            std::to_string(cols) + "], config implies " + m.shape());
    }
    r.need(std::size_t{rows} * cols * 8);
    for (auto& v : m.values()) v = r.f64();
  });
}

}  // namespace detail

inline std::vector<std::byte> serialize_checkpoint(const Checkpoint& ckpt) {
  detail::ByteWriter w;
  for (char c : std::string_view("TRNC")) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kCheckpointVersion);
  nlohmann::json echo = {{"model", config_to_json(ckpt.config)}};
  if (ckpt.train_config) echo["training"] = train_config_to_json(*ckpt.train_config);
  w.text(echo.dump());
  detail::write_tensors(w, ckpt.params);
  w.u8(ckpt.adam ? 1 : 0);
  if (ckpt.adam) {
    w.u64(ckpt.adam->step);
    detail::write_tensors(w, ckpt.adam->first_moment);
    detail::write_tensors(w, ckpt.adam->second_moment);
  }
  return std::move(w.bytes());
}

inline Checkpoint parse_checkpoint(std::span<const std::byte> bytes) {
  detail::ByteReader r(bytes);
  std::string magic;
  for (int i = 0; i < 4; ++i) magic.push_back(static_cast<char>(r.u8()));
  if (magic != "TRNC") throw CheckpointError("not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  try {
    const auto echo = nlohmann::json::parse(r.text());
    ckpt.config = config_from_json(echo.at("model"));
    if (echo.contains("training")) ckpt.train_config = train_config_from_json(echo.at("training"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }
  try {
    ckpt.config.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }
  ckpt.params = TrnParams<double>::zeros(ckpt.config);
  detail::read_tensors(r, ckpt.params);
  if (r.u8() != 0) {
    AdamState adam = AdamState::zeros(ckpt.config);
    adam.step = r.u64();
    detail::read_tensors(r, adam.first_moment);
    detail::read_tensors(r, adam.second_moment);
    ckpt.adam = std::move(adam);
  }
  if (!r.at_end()) throw CheckpointError("checkpoint has trailing bytes");
  return ckpt;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  detail::write_file_bytes(path, serialize_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(detail::read_file_bytes(path));
}

}  // namespace trn
