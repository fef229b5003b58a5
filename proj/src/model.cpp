#include "volfreq/model.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "volfreq/ops.hpp"
#include "volfreq/rng.hpp"

namespace volfreq {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are written in host order");

namespace {

constexpr const char* kCheckpointMagic = "VOLFREQ-CKPT";
constexpr int kCheckpointVersion = 1;

template <typename T>
std::vector<Param<T>> empty_params(int num_class, std::size_t hidden) {
  const std::size_t k = SegModel<T>::kKernel;
  const auto nc = static_cast<std::size_t>(num_class);
  return {
      {"conv1.weight", Tensor<T>({hidden, 1, k, k, k})},
      {"conv1.bias", Tensor<T>({hidden})},
      {"conv2.weight", Tensor<T>({hidden, hidden, k, k, k})},
      {"conv2.bias", Tensor<T>({hidden})},
      {"conv3.weight", Tensor<T>({nc, hidden, k, k, k})},
      {"conv3.bias", Tensor<T>({nc})},
  };
}

template <typename T>
const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

}  // namespace

template <typename T>
SegModel<T>::SegModel(int num_class, std::size_t hidden, std::uint64_t seed, std::vector<Param<T>> params)
    : num_class_(num_class), hidden_(hidden), seed_(seed), params_(std::move(params)) {
  auto expected = empty_params<T>(num_class, hidden);
  if (num_class < 2) throw std::invalid_argument("model needs at least two classes");
  if (params_.size() != expected.size()) throw ShapeError("model expects 6 parameter tensors");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (params_[i].name != expected[i].name || params_[i].value.shape != expected[i].value.shape) {
      throw ShapeError("parameter " + params_[i].name + " " + shape_string(params_[i].value.shape) + " does not match " +
                       expected[i].name + " " + shape_string(expected[i].value.shape));
    }
  }
}

template <typename T>
SegModel<T> SegModel<T>::init(int num_class, std::uint64_t seed, std::size_t hidden) {
  auto params = empty_params<T>(num_class, hidden);
  Rng rng(seed);
  for (std::size_t l = 0; l < 3; ++l) {
    auto& w = params[2 * l].value;
    auto& b = params[2 * l + 1].value;
    const std::size_t fan_in = w.size() / w.shape[0];
    const double wb = std::sqrt(6.0 / static_cast<double>(fan_in));
    const double bb = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : w.data) v = static_cast<T>(rng.uniform(-wb, wb));
    for (auto& v : b.data) v = static_cast<T>(rng.uniform(-bb, bb));
  }
  return SegModel(num_class, hidden, seed, std::move(params));
}

template <typename T>
SegModel<T> SegModel<T>::zeros(int num_class, std::size_t hidden) {
  return SegModel(num_class, hidden, 0, empty_params<T>(num_class, hidden));
}

template <typename T>
std::vector<ad::Var<T>> SegModel<T>::bind(ad::Tape<T>& tape, bool trainable) const {
  std::vector<ad::Var<T>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(tape.leaf(p.value, trainable));
  return out;
}

template <typename T>
ad::Var<T> SegModel<T>::forward(ad::Var<T> x, const std::vector<ad::Var<T>>& p) const {
  if (p.size() != 6) throw ShapeError("forward needs the six bound parameters");
  auto h = ad::relu(ad::conv3d(x, p[0], p[1]));
  h = ad::relu(ad::conv3d(h, p[2], p[3]));
  return ad::conv3d(h, p[4], p[5]);
}

template <typename T>
template <typename U>
SegModel<U> SegModel<T>::cast() const {
  std::vector<Param<U>> ps;
  for (const auto& p : params_) ps.push_back({p.name, p.value.template cast<U>()});
  return SegModel<U>(num_class_, hidden_, seed_, std::move(ps));
}

template <typename T>
Tensor<T> predict_logits(const SegModel<T>& model, const Volume& x) {
  ad::Tape<T> tape;
  const auto& e = x.extent();
  auto in = tape.constant(Tensor<T>({1, e.h, e.w, e.d}, x.tensor<T>().data));
  return model.forward(in, model.bind(tape, false)).value();
}

template <typename T>
LabelField argmax_labels(const Tensor<T>& logits) {
  if (logits.rank() != 4) throw ShapeError("argmax_labels expects (C, H, W, D) logits");
  const std::size_t c = logits.shape[0];
  const Extent e{logits.shape[1], logits.shape[2], logits.shape[3]};
  const std::size_t n = e.voxels();
  std::vector<std::uint8_t> cls(n);
  for (std::size_t v = 0; v < n; ++v) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (logits.data[k * n + v] > logits.data[best * n + v]) best = k;
    }
    cls[v] = static_cast<std::uint8_t>(best);
  }
  return LabelField(e, static_cast<int>(c), std::move(cls));
}

template <typename T>
LabelField predict_labels(const SegModel<T>& model, const Volume& x) {
  return argmax_labels(predict_logits(model, x));
}

template <typename T>
void save_checkpoint(const SegModel<T>& model, const std::filesystem::path& path) {
  std::ostringstream head;
  head << kCheckpointMagic << ' ' << kCheckpointVersion << '\n'
       << "dtype " << dtype_name<T>() << '\n'
       << "num_class " << model.num_class() << '\n'
       << "hidden " << model.hidden() << '\n'
       << "seed " << model.seed() << '\n'
       << "params " << model.params().size() << '\n';
  for (const auto& p : model.params()) {
    head << p.name;
    for (auto s : p.value.shape) head << ' ' << s;
    head << '\n';
  }
  head << "end\n";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  const auto h = head.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& p : model.params()) {
    out.write(reinterpret_cast<const char*>(p.value.data.data()), static_cast<std::streamsize>(p.value.size() * sizeof(T)));
  }
  if (!out) throw CheckpointError("failed writing " + path.string());
}

namespace {

template <typename S, typename T>
void read_blob(std::istream& in, Tensor<T>& dst, const std::string& name) {
  std::vector<S> buf(dst.size());
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(S)));
  if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(S))) {
    throw CheckpointError("checkpoint truncated inside parameter " + name);
  }
  dst.data.assign(buf.begin(), buf.end());
}

}  // namespace

template <typename T>
SegModel<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string line, key;
  std::getline(in, line);
  {
    std::istringstream ls(line);
    int version = 0;
    ls >> key >> version;
    if (key != kCheckpointMagic) throw CheckpointError(path.string() + ": not a checkpoint (bad magic)");
    if (version != kCheckpointVersion) throw CheckpointError(path.string() + ": unsupported version " + std::to_string(version));
  }
  std::string dtype;
  int num_class = 0;
  std::size_t hidden = 0, count = 0;
  std::uint64_t seed = 0;
  std::vector<Param<T>> params;
  while (std::getline(in, line) && line != "end") {
    std::istringstream ls(line);
    ls >> key;
    if (key == "dtype") ls >> dtype;
    else if (key == "num_class") ls >> num_class;
    else if (key == "hidden") ls >> hidden;
    else if (key == "seed") ls >> seed;
    else if (key == "params") ls >> count;
    else {
      Shape s;
      std::size_t v;
      while (ls >> v) s.push_back(v);
      params.push_back({key, Tensor<T>(s)});
    }
  }
  if (line != "end") throw CheckpointError(path.string() + ": manifest is not terminated");
  if (params.size() != count) throw CheckpointError(path.string() + ": manifest lists a wrong parameter count");
  if (dtype != "f32" && dtype != "f64") throw CheckpointError(path.string() + ": unknown dtype '" + dtype + "'");
  for (auto& p : params) {
    if (dtype == "f32") read_blob<float>(in, p.value, p.name);
    else read_blob<double>(in, p.value, p.name);
  }
  return SegModel<T>(num_class, hidden, seed, std::move(params));
}

template class SegModel<float>;
template class SegModel<double>;
template SegModel<double> SegModel<float>::cast<double>() const;
template SegModel<float> SegModel<double>::cast<float>() const;
template SegModel<float> SegModel<float>::cast<float>() const;
template SegModel<double> SegModel<double>::cast<double>() const;
template Tensor<float> predict_logits(const SegModel<float>&, const Volume&);
template Tensor<double> predict_logits(const SegModel<double>&, const Volume&);
template LabelField argmax_labels(const Tensor<float>&);
template LabelField argmax_labels(const Tensor<double>&);
template LabelField predict_labels(const SegModel<float>&, const Volume&);
template LabelField predict_labels(const SegModel<double>&, const Volume&);
template void save_checkpoint(const SegModel<float>&, const std::filesystem::path&);
template void save_checkpoint(const SegModel<double>&, const std::filesystem::path&);
template SegModel<float> load_checkpoint(const std::filesystem::path&);
template SegModel<double> load_checkpoint(const std::filesystem::path&);

}  // namespace volfreq
