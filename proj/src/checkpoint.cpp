#include "maria/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "maria/config.hpp"
#include "maria/util.hpp"

namespace maria {

namespace {

constexpr char kMagic[6] = {'M', 'A', 'R', 'I', 'A', '1'};

template <class T>
void put(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    unsigned char b[sizeof(T)];
    std::memcpy(b, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
  }

  std::string string(const char* what) {
    const auto n = get<std::uint32_t>(what);
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw DataError(std::string("checkpoint truncated while reading ") + what);
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string checkpoint_bytes(const RankingModel& model) {
  const std::string text = model_config_text(model.config());
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, fnv1a(text));
  put_string(out, text);
  const auto params = model.params().all();
  put<std::uint64_t>(out, params.size());
  for (const ad::Parameter* p : params) {
    put_string(out, p->name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->shape.dims.size()));
    for (std::size_t d : p->shape.dims) put<std::uint64_t>(out, d);
    for (double v : p->data) put<double>(out, v);
  }
  return out;
}

void save_checkpoint(const RankingModel& model, const std::string& path) {
  const std::string bytes = checkpoint_bytes(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path);
}

namespace {

std::unique_ptr<RankingModel> decode(const std::string& bytes, const ModelConfig* expected) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw DataError("not a model checkpoint (bad magic)");
  }
  const std::string body = bytes.substr(sizeof kMagic);
  Reader r(body);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto digest = r.get<std::uint64_t>("config digest");
  const std::string text = r.string("config text");
  if (fnv1a(text) != digest) throw DataError("checkpoint config digest mismatch (corrupt header)");
  if (expected && config_digest(*expected) != digest) {
    throw ConfigError("checkpoint config digest " + hex64(digest) +
                      " does not match the expected configuration " +
                      hex64(config_digest(*expected)));
  }
  ModelConfig config = model_config_from_text(text);
  std::unique_ptr<RankingModel> model = make_model(config);

  const auto params = model->params().all();
  const auto records = r.get<std::uint64_t>("record count");
  if (records != params.size()) {
    throw DataError("checkpoint has " + std::to_string(records) + " parameters, model expects " +
                    std::to_string(params.size()));
  }
  for (ad::Parameter* p : params) {
    const std::string name = r.string("parameter name");
    if (name != p->name) throw DataError("checkpoint parameter '" + name + "' where '" + p->name + "' was expected");
    const auto rank = r.get<std::uint32_t>("parameter rank");
    std::vector<std::size_t> dims;
    for (std::uint32_t k = 0; k < rank; ++k) dims.push_back(r.get<std::uint64_t>("parameter shape"));
    if (dims != p->shape.dims) {
      throw DataError("checkpoint parameter '" + name + "' has shape " + ad::Shape(dims).str() +
                      ", model expects " + p->shape.str());
    }
    for (double& v : p->data) v = r.get<double>("parameter data");
  }
  if (!r.done()) throw DataError("checkpoint has trailing bytes");
  return model;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::unique_ptr<RankingModel> checkpoint_from_bytes(const std::string& bytes) {
  return decode(bytes, nullptr);
}

std::unique_ptr<RankingModel> load_checkpoint(const std::string& path) {
  return decode(read_file(path), nullptr);
}

std::unique_ptr<RankingModel> load_checkpoint(const std::string& path, const ModelConfig& expected) {
  return decode(read_file(path), &expected);
}

std::uint64_t parameter_digest(const RankingModel& model) {
  std::string buf;
  for (const ad::Parameter* p : model.params().all()) {
    buf += p->name;
    buf.append(reinterpret_cast<const char*>(p->data.data()), p->data.size() * sizeof(double));
  }
  return fnv1a(buf);
}

}  // namespace maria
