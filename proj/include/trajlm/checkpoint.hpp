// Copyright 2026 The trajlm Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "trajlm/common.hpp"
#include "trajlm/model.hpp"
#include "trajlm/train.hpp"
#include "trajlm/vocab.hpp"

namespace trajlm {

// Checkpoint layout, all integers little-endian:
//   magic "TRAJLMCK" | u32 version | u32 len + provenance | u32 len + model config text |
//   u64 vocab hash | u32 record count |
//   records: u32 len + name | u32 ndim | u64 dims[ndim] | f64 values (row-major)
// Optimizer records are prefixed "adam." and are optional.

inline constexpr std::string_view kCheckpointMagic = "TRAJLMCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public DataError {
 public:
  enum class Kind { kTruncated, kBadMagic, kVersion, kShape, kMissingTensor, kVocabHash };

  CheckpointError(Kind kind, const std::string& what) : DataError("checkpoint: " + what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { uint(v, 4); }
  void u64(std::uint64_t v) { uint(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  std::string take() { return std::move(out_); }

 private:
  void uint(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  std::uint64_t u64() { return uint(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return std::string(bytes(u32())); }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) {
      throw CheckpointError(CheckpointError::Kind::kTruncated,
                            "truncated at byte " + std::to_string(pos_) + " (needed " + std::to_string(n) + " more)");
    }
  }
  std::uint64_t uint(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

template <class Real>
void write_tensor(ByteWriter& w, const std::string& name, const Matrix<Real>& t) {
  w.str(name);
  w.u32(2);
  w.u64(t.rows());
  w.u64(t.cols());
  for (Real v : t.values()) w.f64(static_cast<double>(v));
}

}  // namespace detail

template <class Real>
std::string save_checkpoint(const Model<Real>& model, std::uint64_t vocab_hash,
                            const OptimizerState<Real>* optimizer = nullptr, const std::string& provenance = "") {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.str(provenance);
  w.str(model.config.to_text());
  w.u64(vocab_hash);
  auto& params = const_cast<Model<Real>&>(model).params;
  auto tensors = params.tensors();
  std::size_t count = tensors.size();
  if (optimizer) count += 2 * tensors.size() + 2;
  w.u32(static_cast<std::uint32_t>(count));
  for (const auto& [name, t] : tensors) detail::write_tensor(w, name, *t);
  if (optimizer) {
    auto& opt = const_cast<OptimizerState<Real>&>(*optimizer);
    for (const auto& [name, t] : opt.m.tensors()) detail::write_tensor(w, "adam.m/" + name, *t);
    for (const auto& [name, t] : opt.v.tensors()) detail::write_tensor(w, "adam.v/" + name, *t);
    Matrix<Real> step(1, 1, static_cast<Real>(opt.step));
    Matrix<Real> epochs(1, 1, static_cast<Real>(opt.epochs_done));
    detail::write_tensor(w, "adam.step", step);
    detail::write_tensor(w, "adam.epochs", epochs);
  }
  return w.take();
}

template <class Real>
struct LoadedCheckpoint {
  Model<Real> model;
  std::uint64_t vocab_hash = 0;
  std::string provenance;  // free text, e.g. tool version and config hash
  std::optional<OptimizerState<Real>> optimizer;

  /// Refuses a vocabulary other than the one the model was trained with.
  void require_vocab(const Vocab& vocab) const {
    if (vocab.hash() != vocab_hash) {
      throw CheckpointError(CheckpointError::Kind::kVocabHash,
                            "vocabulary hash " + hex64(vocab.hash()) + " does not match the checkpoint's " +
                                hex64(vocab_hash));
    }
  }
};

template <class Real = double>
LoadedCheckpoint<Real> load_checkpoint(std::string_view bytes) {
  using Kind = CheckpointError::Kind;
  detail::ByteReader r(bytes);
  if (bytes.size() < kCheckpointMagic.size() || r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw CheckpointError(Kind::kBadMagic, "not a trajlm checkpoint");
  }
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::kVersion, "format version " + std::to_string(version) + ", this build reads " +
                                              std::to_string(kCheckpointVersion));
  }
  LoadedCheckpoint<Real> out;
  out.provenance = r.str();
  const auto cfg = ModelConfig::from_text(r.str());
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::kShape, std::string("invalid model config: ") + e.what());
  }
  out.vocab_hash = r.u64();
  out.model = Model<Real>{cfg, Parameters<Real>::zeros(cfg)};

  std::map<std::string, Matrix<Real>*> slots;
  for (auto& [name, t] : out.model.params.tensors()) slots[name] = t;
  auto opt = OptimizerState<Real>::fresh(cfg);
  for (auto& [name, t] : opt.m.tensors()) slots["adam.m/" + name] = t;
  for (auto& [name, t] : opt.v.tensors()) slots["adam.v/" + name] = t;
  Matrix<Real> step(1, 1), epochs(1, 1);
  slots["adam.step"] = &step;
  slots["adam.epochs"] = &epochs;

  std::map<std::string, bool> seen;
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    const auto ndim = r.u32();
    std::vector<std::uint64_t> dims(ndim);
    for (auto& dd : dims) dd = r.u64();
    auto it = slots.find(name);
    if (it == slots.end()) throw CheckpointError(Kind::kShape, "unexpected tensor '" + name + "'");
    Matrix<Real>& t = *it->second;
    if (ndim != 2 || dims[0] != t.rows() || dims[1] != t.cols()) {
      throw CheckpointError(Kind::kShape, "tensor '" + name + "' has the wrong shape for the stored config");
    }
    for (auto& v : t.values()) v = static_cast<Real>(r.f64());
    seen[name] = true;
  }
  if (!r.done()) throw CheckpointError(Kind::kShape, "trailing bytes after the last record");
  for (auto& [name, t] : out.model.params.tensors()) {
    if (!seen.count(name)) throw CheckpointError(Kind::kMissingTensor, "missing tensor '" + name + "'");
  }
  if (seen.count("adam.step")) {
    opt.step = static_cast<std::uint64_t>(step(0, 0));
    opt.epochs_done = static_cast<std::uint64_t>(epochs(0, 0));
    out.optimizer = std::move(opt);
  }
  return out;
}

inline std::string read_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace trajlm
