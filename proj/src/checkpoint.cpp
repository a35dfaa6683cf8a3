#include <cmath>
#include <fstream>

#include "json.hpp"
#include "xsl/binary_io.hpp"
#include "xsl/net.hpp"

namespace xsl::net {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'X', 'S', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

void put_tensor(std::ostream& out, const std::string& name, const Matrix& m) {
  binary::put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  binary::put_u32(out, 2);
  binary::put_u32(out, static_cast<std::uint32_t>(m.rows()));
  binary::put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) binary::put_f32(out, static_cast<float>(m.data()[i]));
}

Matrix tensor_to_matrix(const Tensor& t, const std::string& name) {
  if (t.dims.size() != 2) throw Error(ErrorCode::kFormat, "tensor '" + name + "' is not rank 2");
  Matrix m(t.dims[0], t.dims[1]);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(t.values[static_cast<std::size_t>(i)]);
  return m;
}

fs::path vocab_path(const fs::path& path) { return fs::path(path.string() + ".vocab.json"); }

nlohmann::ordered_json vocab_json(const Vocabulary& v) {
  return {{"lang", v.language_tag()}, {"glosses", v.glosses()}};
}

Vocabulary vocab_from_json(const nlohmann::json& j) {
  return Vocabulary(j.at("glosses").get<std::vector<std::string>>(), j.at("lang").get<std::string>());
}

const Matrix& require(const std::map<std::string, Tensor>& tensors, std::map<std::string, Matrix>& cache,
                      const std::string& name) {
  auto cached = cache.find(name);
  if (cached != cache.end()) return cached->second;
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error(ErrorCode::kFormat, "checkpoint lacks tensor '" + name + "'");
  return cache.emplace(name, tensor_to_matrix(it->second, name)).first->second;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const OptimizerState* state, const fs::path& path) {
  std::vector<std::pair<std::string, Matrix>> tensors;
  const auto& c = params.config;
  Matrix config(1, 6);
  config << c.input_dim, c.hidden_dim, c.embed_dim, c.temporal_kernel, c.temporal_stride, c.num_layers;
  tensors.emplace_back("meta.config", config);
  params.for_each_tensor([&](const std::string& name, const Matrix& m) { tensors.emplace_back(name, m); });
  if (state) {
    const auto& a = state->config;
    Matrix hp(1, 7);
    hp << static_cast<double>(state->step), a.learning_rate, a.beta1, a.beta2, a.epsilon, a.weight_decay,
        static_cast<double>(a.horizon);
    tensors.emplace_back("adam.state", hp);
    for (const auto& [name, m] : state->first_moment) tensors.emplace_back("adam.m." + name, m);
    for (const auto& [name, m] : state->second_moment) tensors.emplace_back("adam.v." + name, m);
  }

  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
    out.write(kMagic, 4);
    binary::put_u32(out, kVersion);
    binary::put_u64(out, tensors.size());
    for (const auto& [name, m] : tensors) put_tensor(out, name, m);
    if (!out) throw Error(ErrorCode::kIo, "failed writing " + path.string());
  }

  nlohmann::ordered_json vocab;
  vocab["cslr"] = nlohmann::ordered_json::object();
  vocab["islr"] = nlohmann::ordered_json::object();
  for (const auto& [lang, head] : params.cslr_heads) vocab["cslr"][lang] = vocab_json(head.vocabulary);
  for (const auto& [lang, head] : params.islr_heads) vocab["islr"][lang] = vocab_json(head.vocabulary);
  std::ofstream vout(vocab_path(path), std::ios::binary | std::ios::trunc);
  if (!vout) throw Error(ErrorCode::kIo, "cannot write " + vocab_path(path).string());
  vout << vocab.dump(1) << '\n';
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open checkpoint " + path.string());
  const std::string what = path.string();
  char magic[4];
  binary::read_exact(in, magic, 4, what);
  if (std::memcmp(magic, kMagic, 4) != 0) throw Error(ErrorCode::kFormat, "bad checkpoint magic in " + what);
  const auto version = binary::get_u32(in, what);
  if (version != kVersion) {
    throw Error(ErrorCode::kFormat, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = binary::get_u64(in, what);
  if (count > (1u << 20)) throw Error(ErrorCode::kFormat, "implausible tensor count in " + what);

  std::map<std::string, Tensor> tensors;
  for (std::uint64_t n = 0; n < count; ++n) {
    const auto name_len = binary::get_u32(in, what);
    if (name_len == 0 || name_len > 4096) throw Error(ErrorCode::kFormat, "bad tensor name length in " + what);
    std::string name(name_len, '\0');
    binary::read_exact(in, name.data(), name_len, what);
    Tensor t;
    const auto rank = binary::get_u32(in, what);
    if (rank > 8) throw Error(ErrorCode::kFormat, "bad tensor rank for '" + name + "'");
    std::uint64_t elems = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.dims.push_back(binary::get_u32(in, what));
      elems *= t.dims.back();
    }
    if (elems > (1ull << 28)) throw Error(ErrorCode::kFormat, "tensor '" + name + "' too large");
    t.values.resize(elems);
    for (auto& v : t.values) v = binary::get_f32(in, what);
    if (!tensors.emplace(name, std::move(t)).second) throw Error(ErrorCode::kFormat, "duplicate tensor '" + name + "'");
  }

  nlohmann::json vocab;
  {
    std::ifstream vin(vocab_path(path));
    if (!vin) throw Error(ErrorCode::kIo, "cannot open " + vocab_path(path).string());
    try {
      vocab = nlohmann::json::parse(vin);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kFormat, "checkpoint vocabulary: " + std::string(e.what()));
    }
  }

  std::map<std::string, Matrix> cache;
  Checkpoint ck;
  const Matrix& config = require(tensors, cache, "meta.config");
  if (config.size() != 6) throw Error(ErrorCode::kFormat, "meta.config must hold 6 values");
  auto& c = ck.params.config;
  c.input_dim = static_cast<int>(config(0, 0));
  c.hidden_dim = static_cast<int>(config(0, 1));
  c.embed_dim = static_cast<int>(config(0, 2));
  c.temporal_kernel = static_cast<int>(config(0, 3));
  c.temporal_stride = static_cast<int>(config(0, 4));
  c.num_layers = static_cast<int>(config(0, 5));
  c.validate();

  // Build a model of the right structure, then overwrite every tensor.
  ck.params = init_model(c, Rng(0));
  try {
    for (const auto& [lang, j] : vocab.at("cslr").items()) add_cslr_head(ck.params, vocab_from_json(j), Rng(0));
    for (const auto& [lang, j] : vocab.at("islr").items()) add_islr_head(ck.params, vocab_from_json(j), Rng(0));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, "checkpoint vocabulary: " + std::string(e.what()));
  }
  std::size_t used = 1;
  ck.params.for_each_tensor([&](const std::string& name, Matrix& m) {
    const Matrix& stored = require(tensors, cache, name);
    if (stored.rows() != m.rows() || stored.cols() != m.cols()) {
      throw Error(ErrorCode::kFormat, "tensor '" + name + "' has an unexpected shape");
    }
    m = stored;
    ++used;
  });

  if (tensors.count("adam.state")) {
    const Matrix& hp = require(tensors, cache, "adam.state");
    if (hp.size() != 7) throw Error(ErrorCode::kFormat, "adam.state must hold 7 values");
    OptimizerState state;
    state.step = static_cast<long>(hp(0, 0));
    state.config.learning_rate = hp(0, 1);
    state.config.beta1 = hp(0, 2);
    state.config.beta2 = hp(0, 3);
    state.config.epsilon = hp(0, 4);
    state.config.weight_decay = hp(0, 5);
    state.config.horizon = static_cast<long>(hp(0, 6));
    ++used;
    ck.params.for_each_tensor([&](const std::string& name, Matrix& m) {
      const Matrix& first = require(tensors, cache, "adam.m." + name);
      const Matrix& second = require(tensors, cache, "adam.v." + name);
      if (first.rows() != m.rows() || first.cols() != m.cols() || second.rows() != m.rows() ||
          second.cols() != m.cols()) {
        throw Error(ErrorCode::kFormat, "moment shape mismatch for '" + name + "'");
      }
      state.first_moment[name] = first;
      state.second_moment[name] = second;
      used += 2;
    });
    ck.optimizer = std::move(state);
  }
  if (used != tensors.size()) throw Error(ErrorCode::kFormat, "checkpoint holds unrecognized tensors");
  return ck;
}

}  // namespace xsl::net
