#include "cimate/nn/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <type_traits>

#include "cimate/error.hpp"

namespace cimate::nn {

namespace {

constexpr char kMagic[8] = {'C', 'I', 'M', 'A', 'T', 'E', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, float> ? "f32" : "f64";
}

template <typename U>
void write_pod(std::ostream& out, U value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

template <typename U>
U read_pod(std::istream& in) {
  U value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(U));
  if (!in) throw MalformedDocument("truncated checkpoint");
  return value;
}

}  // namespace

template <typename T>
void save_checkpoint(std::ostream& out, const ParamSet<T>& params, const nlohmann::json& config) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& p : params) {
    tensors.push_back({{"name", p.name},
                       {"rows", p.value.rows()},
                       {"cols", p.value.cols()},
                       {"dtype", dtype_name<T>()},
                       {"decay", p.decay},
                       {"trainable", p.trainable},
                       {"pad_row", p.pad_row}});
  }
  const std::string header = nlohmann::json{{"config", config}, {"tensors", tensors}}.dump();
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, kVersion);
  write_pod<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& p : params) {
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(sizeof(T) * static_cast<std::size_t>(p.value.size())));
  }
  if (!out) throw InvalidArgument("failed to write checkpoint");
}

template <typename T>
Checkpoint<T> load_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw MalformedDocument("not a checkpoint file");
  }
  if (read_pod<std::uint32_t>(in) != kVersion) throw MalformedDocument("unsupported checkpoint version");
  const auto header_len = read_pod<std::uint64_t>(in);
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw MalformedDocument("truncated checkpoint header");
  const auto meta = nlohmann::json::parse(header);
  Checkpoint<T> ckpt;
  ckpt.config = meta.at("config");
  for (const auto& t : meta.at("tensors")) {
    if (t.at("dtype").get<std::string>() != dtype_name<T>()) {
      throw MalformedDocument("checkpoint dtype " + t.at("dtype").get<std::string>() +
                              " does not match requested " + dtype_name<T>());
    }
    Tensor<T> value(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
    in.read(reinterpret_cast<char*>(value.data()),
            static_cast<std::streamsize>(sizeof(T) * static_cast<std::size_t>(value.size())));
    if (!in) throw MalformedDocument("truncated checkpoint data");
    const std::size_t i = ckpt.params.add(t.at("name").get<std::string>(), std::move(value),
                                          t.at("decay").get<bool>(), t.at("pad_row").get<int>());
    ckpt.params[i].trainable = t.at("trainable").get<bool>();
  }
  return ckpt;
}

template <typename T>
void save_checkpoint_file(const std::string& path, const ParamSet<T>& params,
                          const nlohmann::json& config) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot open " + path + " for writing");
  save_checkpoint(out, params, config);
}

template <typename T>
Checkpoint<T> load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open checkpoint " + path);
  return load_checkpoint<T>(in);
}

template void save_checkpoint<float>(std::ostream&, const ParamSet<float>&, const nlohmann::json&);
template void save_checkpoint<double>(std::ostream&, const ParamSet<double>&, const nlohmann::json&);
template Checkpoint<float> load_checkpoint<float>(std::istream&);
template Checkpoint<double> load_checkpoint<double>(std::istream&);
template void save_checkpoint_file<float>(const std::string&, const ParamSet<float>&,
                                          const nlohmann::json&);
template void save_checkpoint_file<double>(const std::string&, const ParamSet<double>&,
                                           const nlohmann::json&);
template Checkpoint<float> load_checkpoint_file<float>(const std::string&);
template Checkpoint<double> load_checkpoint_file<double>(const std::string&);

}  // namespace cimate::nn
