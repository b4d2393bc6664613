#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "kdpos/layers.hpp"

namespace kdpos::nn {

// A model is a set of parallel branches fed by the same input, concatenated
// along the feature axis and followed by a classifier head that produces
// logits. The softmax output layer is applied by predict_proba / the losses,
// so distillation can read logits directly.
template <class S>
class Model {
 public:
  std::string name;
  std::vector<std::size_t> input_shape;  // per-sample, e.g. {100, 6}
  std::vector<std::vector<std::unique_ptr<Layer<S>>>> branches;
  std::vector<std::unique_ptr<Layer<S>>> head;

  // Assigns hierarchical parameter names and seeds the initial weights.
  void finalize(std::uint64_t seed) {
    for (std::size_t bi = 0; bi < branches.size(); ++bi)
      for (std::size_t li = 0; li < branches[bi].size(); ++li)
        branches[bi][li]->set_name("branch" + std::to_string(bi) + "/l" +
                                   std::to_string(li) + "." +
                                   branches[bi][li]->summary());
    for (std::size_t li = 0; li < head.size(); ++li)
      head[li]->set_name("head/l" + std::to_string(li) + "." +
                         head[li]->summary());
    Rng rng(seed);
    for (auto& br : branches)
      for (auto& l : br) l->init(rng);
    for (auto& l : head) l->init(rng);
  }

  Tensor<S> forward(const Tensor<S>& x, bool training = false,
                    Rng* rng = nullptr) {
    check_input(x);
    const std::size_t bsz = x.dim(0);
    std::vector<Tensor<S>> outs;
    outs.reserve(branches.size());
    split_.clear();
    for (std::size_t bi = 0; bi < branches.size(); ++bi) {
      Tensor<S> t = x;
      for (std::size_t li = 0; li < branches[bi].size(); ++li)
        t = run_layer(*branches[bi][li], t, training, rng, bi, li);
    if (t.rank() != 2)
        throw input_error("shape error: branch " + std::to_string(bi) +
                          " must end 2-d, got " + t.shape_str());
      split_.push_back(t.dim(1));
      outs.push_back(std::move(t));
    }
    Tensor<S> joined = concat_rows(outs, bsz);
    for (std::size_t li = 0; li < head.size(); ++li)
      joined = run_layer(*head[li], joined, training, rng, SIZE_MAX, li);
    return joined;  // logits
  }

  void backward(const Tensor<S>& glogits) {
    Tensor<S> g = glogits;
    for (std::size_t li = head.size(); li-- > 0;) g = head[li]->backward(g);
    // Split the concatenated gradient back into branches.
    const std::size_t bsz = g.dim(0);
    std::size_t off = 0;
    for (std::size_t bi = 0; bi < branches.size(); ++bi) {
      Tensor<S> gb({bsz, split_[bi]});
      for (std::size_t r = 0; r < bsz; ++r)
        std::copy(g.data() + r * g.dim(1) + off,
                  g.data() + r * g.dim(1) + off + split_[bi],
                  gb.data() + r * split_[bi]);
      off += split_[bi];
      for (std::size_t li = branches[bi].size(); li-- > 0;)
        gb = branches[bi][li]->backward(gb);
    }
  }

  std::vector<Param<S>*> params() {
    std::vector<Param<S>*> out;
    for (auto& br : branches)
      for (auto& l : br) l->collect(out);
    for (auto& l : head) l->collect(out);
    return out;
  }

  void zero_grads() {
    for (Param<S>* p : params()) p->grad.fill(S(0));
  }

  std::size_t param_count() {
    std::size_t n = 0;
    for (Param<S>* p : params()) n += p->value.numel();
    return n;
  }

  // Per-layer table with output shapes and parameter counts.
  std::string summary() {
    std::ostringstream os;
    os << "model: " << name << "\n";
    os << "input: " << shape_str(input_shape) << "\n";
    std::size_t total = 0;
    std::vector<std::size_t> concat_in;
    for (std::size_t bi = 0; bi < branches.size(); ++bi) {
      auto shape = input_shape;
      for (auto& l : branches[bi]) {
        shape = l->out_shape(shape);
        std::size_t n = layer_params(*l);
        total += n;
        os << "  " << l->name() << "  out=" << shape_str(shape)
           << "  params=" << n << "\n";
      }
      concat_in.push_back(shape.back());
    }
    std::size_t cat = 0;
    for (std::size_t w : concat_in) cat += w;
    if (branches.size() > 1) os << "  concat  out=(" << cat << ")  params=0\n";
    std::vector<std::size_t> shape{cat};
    for (auto& l : head) {
      shape = l->out_shape(shape);
      std::size_t n = layer_params(*l);
      total += n;
      os << "  " << l->name() << "  out=" << shape_str(shape)
         << "  params=" << n << "\n";
    }
    os << "  softmax-output  out=" << shape_str(shape) << "  params=0\n";
    os << "total params: " << total << "\n";
    return os.str();
  }

  std::uint64_t graph_hash() {
    std::ostringstream os;
    os << shape_str(input_shape);
    for (auto& br : branches) {
      os << "[";
      for (auto& l : br) os << l->summary() << ";";
      os << "]";
    }
    os << "head[";
    for (auto& l : head) os << l->summary() << ";";
    os << "]";
    return fnv1a64(os.str());
  }

  std::vector<Tensor<S>> snapshot_params() {
    std::vector<Tensor<S>> out;
    for (Param<S>* p : params()) out.push_back(p->value);
    return out;
  }

  void restore_params(const std::vector<Tensor<S>>& snap) {
    auto ps = params();
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = snap[i];
  }

 private:
  std::vector<std::size_t> split_;

  static std::size_t layer_params(Layer<S>& l) {
    std::vector<Param<S>*> ps;
    l.collect(ps);
    std::size_t n = 0;
    for (auto* p : ps) n += p->value.numel();
    return n;
  }

  static std::string shape_str(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
  }

  void check_input(const Tensor<S>& x) const {
    bool ok = x.rank() == input_shape.size() + 1;
    for (std::size_t i = 0; ok && i < input_shape.size(); ++i)
      ok = x.dim(i + 1) == input_shape[i];
    if (!ok)
      throw input_error("shape error: model " + name + " expects (batch)+" +
                        shape_str(input_shape) + ", got " + x.shape_str());
  }

  Tensor<S> run_layer(Layer<S>& l, Tensor<S>& t, bool training, Rng* rng,
                      std::size_t bi, std::size_t li) {
    try {
      return l.forward(t, training, rng);
    } catch (const Error& e) {
      std::string where = bi == SIZE_MAX ? "head" : "branch" + std::to_string(bi);
      throw Error(e.kind(), std::string(e.what()) + " (at " + where + " layer " +
                                std::to_string(li) + ")");
    }
  }

  static Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts,
                               std::size_t bsz) {
    std::size_t width = 0;
    for (const auto& p : parts) width += p.dim(1);
    Tensor<S> out({bsz, width});
    std::size_t off = 0;
    for (const auto& p : parts) {
      for (std::size_t r = 0; r < bsz; ++r)
        std::copy(p.data() + r * p.dim(1), p.data() + (r + 1) * p.dim(1),
                  out.data() + r * width + off);
      off += p.dim(1);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Checkpoint container: "BSPC" magic, version, graph hash, then one record
// per parameter (name, shape, raw little-endian 64-bit values).
namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
inline std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
inline std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
}  // namespace detail

template <class S>
void save_checkpoint(Model<S>& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw input_error("cannot write checkpoint: " + path);
  os.write("BSPC", 4);
  detail::put_u32(os, 1);
  detail::put_u64(os, m.graph_hash());
  auto ps = m.params();
  detail::put_u32(os, std::uint32_t(ps.size()));
  for (Param<S>* p : ps) {
    std::string full = p->name;
    detail::put_u32(os, std::uint32_t(full.size()));
    os.write(full.data(), std::streamsize(full.size()));
    detail::put_u32(os, std::uint32_t(p->value.shape().size()));
    for (std::size_t d : p->value.shape()) detail::put_u64(os, d);
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      double v = double(p->value[i]);
      os.write(reinterpret_cast<const char*>(&v), 8);
    }
  }
  if (!os) throw input_error("checkpoint write failed: " + path);
}

template <class S>
void load_checkpoint(Model<S>& m, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw dependency_error("missing checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "BSPC", 4) != 0)
    throw input_error("not a checkpoint file: " + path);
  std::uint32_t version = detail::get_u32(is);
  if (version != 1)
    throw input_error("unsupported checkpoint version " +
                      std::to_string(version));
  std::uint64_t hash = detail::get_u64(is);
  if (hash != m.graph_hash())
    throw input_error("checkpoint graph hash mismatch for model " + m.name +
                      " in " + path);
  std::uint32_t n = detail::get_u32(is);
  auto ps = m.params();
  if (n != ps.size()) throw input_error("checkpoint parameter count mismatch");
  for (Param<S>* p : ps) {
    std::uint32_t len = detail::get_u32(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (name != p->name)
      throw input_error("checkpoint parameter order mismatch: " + name);
    std::uint32_t nd = detail::get_u32(is);
    std::vector<std::size_t> shape(nd);
    for (auto& d : shape) d = std::size_t(detail::get_u64(is));
    if (shape != p->value.shape())
      throw input_error("checkpoint shape mismatch for " + name);
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      double v = 0;
      is.read(reinterpret_cast<char*>(&v), 8);
      p->value[i] = S(v);
    }
  }
  if (!is) throw input_error("truncated checkpoint: " + path);
}

}  // namespace kdpos::nn
