#pragma once

#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "wsod/config.hpp"
#include "wsod/error.hpp"
#include "wsod/linear.hpp"

namespace wsod {

/// Every trainable head of the detector. All heads read the same frozen
/// region features.
struct Model {
  LinearHead midn_cls;              // F -> C
  LinearHead midn_det;              // F -> C
  std::vector<LinearHead> mcc;      // T x (F -> C+1)
  std::vector<LinearHead> icbc;     // T x (F -> C)
  LinearHead rcnn_cls;              // F -> C+1
  LinearHead rcnn_reg;              // F -> 4 (or 4C)

  std::size_t num_classes() const { return midn_cls.out_dim(); }
  std::size_t stages() const { return mcc.size(); }

  static Model create(const RunConfig& cfg) {
    const std::size_t F = feature_dim(cfg.data);
    const auto C = static_cast<std::size_t>(cfg.data.num_classes);
    std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 17);
    const double sd = cfg.optim.init_std;
    Model m;
    m.midn_cls = LinearHead::random(F, C, sd, rng);
    m.midn_det = LinearHead::random(F, C, sd, rng);
    for (int t = 0; t < cfg.loss.stages; ++t) {
      m.mcc.push_back(LinearHead::random(F, C + 1, sd, rng));
      m.icbc.push_back(LinearHead::random(F, C, sd, rng));
    }
    m.rcnn_cls = LinearHead::random(F, C + 1, sd, rng);
    m.rcnn_reg = LinearHead::random(F, cfg.inference.class_specific_regression ? 4 * C : 4, sd, rng);
    return m;
  }

  template <typename Fn>
  void for_each_head(Fn&& fn) {
    fn(midn_cls);
    fn(midn_det);
    for (auto& h : mcc) fn(h);
    for (auto& h : icbc) fn(h);
    fn(rcnn_cls);
    fn(rcnn_reg);
  }

  template <typename Fn>
  void for_each_head(Fn&& fn) const {
    fn(midn_cls);
    fn(midn_det);
    for (const auto& h : mcc) fn(h);
    for (const auto& h : icbc) fn(h);
    fn(rcnn_cls);
    fn(rcnn_reg);
  }

  /// Parameters only; momentum buffers are ignored.
  bool same_parameters(const Model& o) const {
    std::vector<const LinearHead*> a, b;
    for_each_head([&](const LinearHead& h) { a.push_back(&h); });
    o.for_each_head([&](const LinearHead& h) { b.push_back(&h); });
    if (a.size() != b.size()) return false;
    for (std::size_t k = 0; k < a.size(); ++k)
      if (a[k]->weights != b[k]->weights || a[k]->bias != b[k]->bias) return false;
    return true;
  }
};

inline constexpr char kCheckpointMagic[8] = {'W', 'S', 'O', 'D', 'C', 'K', 'P', '1'};

// Checkpoint: 8-byte magic, u64 stage count T, then the heads in the order
// midn_cls, midn_det, mcc[0..T), icbc[0..T), rcnn_cls, rcnn_reg, each in the
// write_head layout.
inline void write_checkpoint(std::ostream& os, const Model& m) {
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::write_u64(os, m.stages());
  m.for_each_head([&](const LinearHead& h) { write_head(os, h); });
}

inline std::string checkpoint_bytes(const Model& m) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, m);
  return os.str();
}

inline Model read_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::string_view(magic, 8) != std::string_view(kCheckpointMagic, 8))
    throw Error("checkpoint: bad magic");
  const auto T = detail::read_u64(is);
  if (T > 64) throw Error("checkpoint: implausible stage count");
  Model m;
  m.mcc.resize(T);
  m.icbc.resize(T);
  m.for_each_head([&](LinearHead& h) { h = read_head(is); });
  return m;
}

inline void save_checkpoint(const std::string& path, const Model& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write checkpoint '" + path + "'");
  write_checkpoint(os, m);
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint '" + path + "'");
  return read_checkpoint(is);
}

}  // namespace wsod
