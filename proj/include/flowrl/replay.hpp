#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "flowrl/rng.hpp"
#include "flowrl/tensor.hpp"

namespace flowrl {

// One environment step: mask = 1 - done (0 means terminal, nothing is
// bootstrapped past this row).
struct Transition {
  std::vector<double> s;
  std::vector<double> a;
  double r = 0.0;
  std::vector<double> s_next;
  double mask = 1.0;
};

// Columnar transition storage.
struct Dataset {
  int state_dim = 0;
  int action_dim = 0;
  std::string env_name;
  std::uint64_t generator_seed = 0;
  std::vector<double> s, a, r, s_next, mask;

  std::size_t size() const { return r.size(); }

  void push(const Transition& t) {
    if (static_cast<int>(t.s.size()) != state_dim || static_cast<int>(t.s_next.size()) != state_dim)
      throw std::invalid_argument("Dataset::push: state dim mismatch");
    if (static_cast<int>(t.a.size()) != action_dim)
      throw std::invalid_argument("Dataset::push: action dim mismatch");
    if (t.mask != 0.0 && t.mask != 1.0)
      throw std::invalid_argument("Dataset::push: mask must be 0 or 1");
    for (double v : t.a)
      if (v < -1.0 || v > 1.0) throw std::invalid_argument("Dataset::push: action outside [-1,1]");
    s.insert(s.end(), t.s.begin(), t.s.end());
    a.insert(a.end(), t.a.begin(), t.a.end());
    r.push_back(t.r);
    s_next.insert(s_next.end(), t.s_next.begin(), t.s_next.end());
    mask.push_back(t.mask);
  }

  Transition row(std::size_t i) const {
    Transition t;
    t.s.assign(s.begin() + i * state_dim, s.begin() + (i + 1) * state_dim);
    t.a.assign(a.begin() + i * action_dim, a.begin() + (i + 1) * action_dim);
    t.r = r[i];
    t.s_next.assign(s_next.begin() + i * state_dim, s_next.begin() + (i + 1) * state_dim);
    t.mask = mask[i];
    return t;
  }
};

// ---------------------------------------------------------------------------
// dataset file format, version 1 (documented in README.md):
//   bytes 0..7   magic "FLOWRLD1"
//   u32 state_dim, u32 action_dim, u64 size  (little-endian)
//   u32 name_len, name bytes (env name)
//   u64 generator_seed
//   doubles, little-endian, row-major: s [size*state_dim], a [size*action_dim],
//   r [size], s_next [size*state_dim], mask [size]
// ---------------------------------------------------------------------------

namespace detail {

inline void ensure_little_endian() {
  const std::uint32_t probe = 1;
  if (*reinterpret_cast<const unsigned char*>(&probe) != 1)
    throw std::runtime_error("dataset io: big-endian hosts are not supported");
}

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("dataset io: truncated file");
  return v;
}

inline void write_doubles(std::ostream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
}

inline void read_doubles(std::istream& in, std::vector<double>& v, std::size_t n) {
  v.resize(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 8));
  if (!in) throw std::runtime_error("dataset io: truncated file");
}

}  // namespace detail

inline void save_dataset(const std::string& path, const Dataset& ds) {
  detail::ensure_little_endian();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_dataset: cannot write " + path);
  out.write("FLOWRLD1", 8);
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ds.state_dim));
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ds.action_dim));
  detail::write_pod<std::uint64_t>(out, ds.size());
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ds.env_name.size()));
  out.write(ds.env_name.data(), static_cast<std::streamsize>(ds.env_name.size()));
  detail::write_pod<std::uint64_t>(out, ds.generator_seed);
  detail::write_doubles(out, ds.s);
  detail::write_doubles(out, ds.a);
  detail::write_doubles(out, ds.r);
  detail::write_doubles(out, ds.s_next);
  detail::write_doubles(out, ds.mask);
  if (!out) throw std::runtime_error("save_dataset: write failed for " + path);
}

inline Dataset load_dataset(const std::string& path) {
  detail::ensure_little_endian();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_dataset: cannot read " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "FLOWRLD1", 8) != 0)
    throw std::runtime_error("load_dataset: " + path + " is not a flowrl dataset (bad magic)");
  Dataset ds;
  ds.state_dim = static_cast<int>(detail::read_pod<std::uint32_t>(in));
  ds.action_dim = static_cast<int>(detail::read_pod<std::uint32_t>(in));
  std::uint64_t n = detail::read_pod<std::uint64_t>(in);
  std::uint32_t name_len = detail::read_pod<std::uint32_t>(in);
  ds.env_name.resize(name_len);
  in.read(ds.env_name.data(), name_len);
  ds.generator_seed = detail::read_pod<std::uint64_t>(in);
  detail::read_doubles(in, ds.s, n * ds.state_dim);
  detail::read_doubles(in, ds.a, n * ds.action_dim);
  detail::read_doubles(in, ds.r, n);
  detail::read_doubles(in, ds.s_next, n * ds.state_dim);
  detail::read_doubles(in, ds.mask, n);
  return ds;
}

// Sampled minibatch; states/actions as tensors (network inputs), rewards
// and masks as plain columns (target arithmetic happens off the tape).
struct Batch {
  Tensor s, a, s_next;
  std::vector<double> r, mask;
  int size = 0;
};

// Offline dataset plus an appendable online region. The offline prefix is
// never evicted; if capacity is reached, appends wrap around within the
// online region only.
class ReplayBuffer {
 public:
  ReplayBuffer(Dataset offline, std::size_t capacity)
      : data_(std::move(offline)), offline_size_(data_.size()), capacity_(capacity) {
    if (capacity_ < data_.size()) throw std::invalid_argument("ReplayBuffer: capacity below offline size");
  }

  std::size_t size() const { return data_.size(); }
  std::size_t offline_size() const { return offline_size_; }
  std::size_t capacity() const { return capacity_; }
  int state_dim() const { return data_.state_dim; }
  int action_dim() const { return data_.action_dim; }
  const Dataset& data() const { return data_; }

  void append(const Transition& t) {
    if (data_.size() < capacity_) {
      data_.push(t);
      return;
    }
    if (offline_size_ == capacity_)
      throw std::runtime_error("ReplayBuffer: full and offline rows may not be evicted");
    // overwrite the oldest online row
    std::size_t i = offline_size_ + online_cursor_;
    online_cursor_ = (online_cursor_ + 1) % (capacity_ - offline_size_);
    std::copy(t.s.begin(), t.s.end(), data_.s.begin() + i * data_.state_dim);
    std::copy(t.a.begin(), t.a.end(), data_.a.begin() + i * data_.action_dim);
    data_.r[i] = t.r;
    std::copy(t.s_next.begin(), t.s_next.end(), data_.s_next.begin() + i * data_.state_dim);
    data_.mask[i] = t.mask;
  }

 private:
  Dataset data_;
  std::size_t offline_size_;
  std::size_t capacity_;
  std::size_t online_cursor_ = 0;
};

// i.i.d. uniform sampling with replacement over current contents
inline Batch buffer_sample(const ReplayBuffer& buffer, int batch_size, Rng& rng) {
  if (buffer.size() == 0) throw std::invalid_argument("buffer_sample: buffer is empty");
  if (batch_size < 1) throw std::invalid_argument("buffer_sample: batch_size must be >= 1");
  const Dataset& ds = buffer.data();
  int sd = ds.state_dim, ad = ds.action_dim;
  Batch b;
  b.size = batch_size;
  std::vector<double> s(static_cast<std::size_t>(batch_size) * sd);
  std::vector<double> a(static_cast<std::size_t>(batch_size) * ad);
  std::vector<double> sn(static_cast<std::size_t>(batch_size) * sd);
  b.r.resize(batch_size);
  b.mask.resize(batch_size);
  for (int k = 0; k < batch_size; ++k) {
    std::size_t i = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(buffer.size())));
    std::copy(ds.s.begin() + i * sd, ds.s.begin() + (i + 1) * sd, s.begin() + static_cast<std::size_t>(k) * sd);
    std::copy(ds.a.begin() + i * ad, ds.a.begin() + (i + 1) * ad, a.begin() + static_cast<std::size_t>(k) * ad);
    std::copy(ds.s_next.begin() + i * sd, ds.s_next.begin() + (i + 1) * sd,
              sn.begin() + static_cast<std::size_t>(k) * sd);
    b.r[k] = ds.r[i];
    b.mask[k] = ds.mask[i];
  }
  b.s = Tensor::from({batch_size, sd}, std::move(s));
  b.a = Tensor::from({batch_size, ad}, std::move(a));
  b.s_next = Tensor::from({batch_size, sd}, std::move(sn));
  return b;
}

}  // namespace flowrl
