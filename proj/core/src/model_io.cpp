#include "seuforge/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "seuforge/error.hpp"

namespace seuforge {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'S', 'E', 'U', 'F', 'O', 'R', 'G', 'E'};
constexpr std::size_t kHeaderSize = 8 + 4 + 4 + 8 + 8;

static_assert(std::endian::native == std::endian::little, "model container assumes a little-endian host");

std::size_t align8(std::size_t n) { return (n + 7) & ~std::size_t{7}; }

template <typename T>
void put(std::vector<std::byte>& out, T v) {
  const auto* p = reinterpret_cast<const std::byte*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(std::span<const std::byte> data, std::size_t offset) {
  T v;
  std::memcpy(&v, data.data() + offset, sizeof(T));
  return v;
}

json quant_to_json(const QuantParams& q) { return {{"scale", q.scale}, {"zero_point", q.zero_point}, {"bits", q.bits}}; }

QuantParams quant_from_json(const json& j) {
  return {j.at("scale").get<double>(), j.at("zero_point").get<std::int32_t>(), j.at("bits").get<int>()};
}

std::string padding_name(Padding p) { return p == Padding::kSame ? "same" : "valid"; }

Padding padding_from(const std::string& s) {
  if (s == "same") return Padding::kSame;
  if (s == "valid") return Padding::kValid;
  fail(ErrorCode::kFormat, "unknown padding '" + s + "'");
}

json manifest_of(const ModelGraph& g, std::vector<std::size_t>* offsets, std::size_t* blob_size) {
  json layers = json::array();
  for (const auto& l : g.layers) {
    json jl = {{"kind", std::string(to_string(l.kind))}, {"name", l.name}, {"inputs", l.inputs}};
    if (l.kernel) jl["kernel"] = l.kernel;
    if (l.filters) jl["filters"] = l.filters;
    jl["stride"] = l.stride;
    jl["padding"] = padding_name(l.padding);
    jl["epsilon"] = l.epsilon;
    layers.push_back(std::move(jl));
  }
  json params = json::array();
  std::size_t offset = 0;
  for (const auto& p : g.params) {
    const std::size_t length = p.tensor.bytes().size();
    json jp = {{"index", p.index},
               {"layer", p.layer},
               {"role", std::string(to_string(p.role))},
               {"encoding", std::string(to_string(p.tensor.encoding()))},
               {"shape", p.tensor.shape()},
               {"offset", offset},
               {"length", length}};
    if (p.quant) jp["quant"] = quant_to_json(*p.quant);
    params.push_back(std::move(jp));
    if (offsets) offsets->push_back(offset);
    offset = align8(offset + length);
  }
  if (blob_size) *blob_size = offset;
  const auto& m = g.metadata;
  json transforms = json::array();
  for (const auto& t : m.transforms) {
    transforms.push_back({{"name", t.name}, {"params", t.params_json.empty() ? json::object() : json::parse(t.params_json)}});
  }
  json act = json::object();
  for (const auto& [name, q] : m.activation_quant) act[name] = quant_to_json(q);
  json notes = json::object();
  for (const auto& [k, v] : m.notes) notes[k] = v;
  json meta = {{"provenance", m.provenance}, {"seed", m.seed},          {"prng", m.prng},
               {"pruned", m.pruned},         {"folded", m.folded},      {"quantized", m.quantized},
               {"transforms", transforms},   {"activation_quant", act}, {"notes", notes}};
  return {{"format", "seuforge-model"},
          {"version", kModelFormatVersion},
          {"input_channels", g.input_channels},
          {"class_count", g.class_count},
          {"layers", layers},
          {"params", params},
          {"metadata", meta},
          {"blob_size", offset}};
}

}  // namespace

std::string model_manifest_json(const ModelGraph& graph, int indent) {
  return manifest_of(graph, nullptr, nullptr).dump(indent);
}

std::vector<std::byte> serialize_model(const ModelGraph& graph) {
  std::vector<std::size_t> offsets;
  std::size_t blob_size = 0;
  json manifest = manifest_of(graph, &offsets, &blob_size);

  std::vector<std::byte> blob(blob_size);
  for (std::size_t i = 0; i < graph.params.size(); ++i) {
    const auto b = graph.params[i].tensor.bytes();
    std::memcpy(blob.data() + offsets[i], b.data(), b.size());
  }
  manifest["blob_checksum"] = fnv1a64(blob);
  const std::string text = manifest.dump();
  const auto text_bytes = std::as_bytes(std::span(text.data(), text.size()));

  std::vector<std::byte> out;
  out.reserve(kHeaderSize + align8(text.size()) + blob.size());
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  put<std::uint32_t>(out, kModelFormatVersion);
  put<std::uint32_t>(out, 0);
  put<std::uint64_t>(out, text.size());
  put<std::uint64_t>(out, fnv1a64(text_bytes));
  out.insert(out.end(), text_bytes.begin(), text_bytes.end());
  out.resize(kHeaderSize + align8(text.size()), std::byte{0});
  out.insert(out.end(), blob.begin(), blob.end());
  return out;
}

ModelGraph deserialize_model(std::span<const std::byte> data) {
  if (data.size() < kHeaderSize) fail(ErrorCode::kFormat, "truncated model file: header incomplete");
  if (std::memcmp(data.data(), kMagic, sizeof kMagic) != 0) fail(ErrorCode::kFormat, "not a model file: bad magic");
  const auto version = get<std::uint32_t>(data, 8);
  if (version != kModelFormatVersion) {
    fail(ErrorCode::kFormat, "unsupported model format version " + std::to_string(version) + " (expected " +
                                 std::to_string(kModelFormatVersion) + ")");
  }
  const auto manifest_len = get<std::uint64_t>(data, 16);
  const auto manifest_sum = get<std::uint64_t>(data, 24);
  if (manifest_len > data.size() - kHeaderSize) fail(ErrorCode::kFormat, "truncated model file: manifest incomplete");
  const auto text = data.subspan(kHeaderSize, manifest_len);
  if (fnv1a64(text) != manifest_sum) fail(ErrorCode::kFormat, "model manifest checksum mismatch");

  json m;
  try {
    m = json::parse(reinterpret_cast<const char*>(text.data()), reinterpret_cast<const char*>(text.data()) + text.size());
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, std::string("model manifest is not valid JSON: ") + e.what());
  }

  ModelGraph g;
  try {
    const std::size_t blob_start = kHeaderSize + align8(manifest_len);
    const auto blob_size = m.at("blob_size").get<std::size_t>();
    if (blob_start > data.size() || data.size() - blob_start < blob_size) {
      fail(ErrorCode::kFormat, "truncated model file: parameter blob incomplete");
    }
    const auto blob = data.subspan(blob_start, blob_size);
    if (fnv1a64(blob) != m.at("blob_checksum").get<std::uint64_t>()) {
      fail(ErrorCode::kFormat, "parameter blob checksum mismatch");
    }
    g.input_channels = m.at("input_channels").get<std::size_t>();
    g.class_count = m.at("class_count").get<std::size_t>();
    for (const auto& jl : m.at("layers")) {
      LayerSpec l;
      l.kind = layer_kind_from_string(jl.at("kind").get<std::string>());
      l.name = jl.at("name").get<std::string>();
      l.inputs = jl.at("inputs").get<std::vector<std::string>>();
      l.kernel = jl.value("kernel", std::size_t{0});
      l.filters = jl.value("filters", std::size_t{0});
      l.stride = jl.at("stride").get<std::size_t>();
      l.padding = padding_from(jl.at("padding").get<std::string>());
      l.epsilon = jl.at("epsilon").get<float>();
      g.layers.push_back(std::move(l));
    }
    for (const auto& jp : m.at("params")) {
      ParamSet p;
      p.index = jp.at("index").get<int>();
      p.layer = jp.at("layer").get<std::string>();
      p.role = param_role_from_string(jp.at("role").get<std::string>());
      const auto enc = encoding_from_string(jp.at("encoding").get<std::string>());
      const auto shape = jp.at("shape").get<Shape>();
      const auto offset = jp.at("offset").get<std::size_t>();
      const auto length = jp.at("length").get<std::size_t>();
      p.tensor = Tensor(shape, enc);
      auto dst = p.tensor.mutable_bytes();
      if (length != dst.size() || offset > blob.size() || blob.size() - offset < length) {
        fail(ErrorCode::kFormat, "parameter p" + std::to_string(p.index) + " has an inconsistent blob extent");
      }
      std::memcpy(dst.data(), blob.data() + offset, length);
      if (jp.contains("quant")) p.quant = quant_from_json(jp.at("quant"));
      g.params.push_back(std::move(p));
    }
    const auto& jm = m.at("metadata");
    auto& md = g.metadata;
    md.provenance = jm.at("provenance").get<std::string>();
    md.seed = jm.at("seed").get<std::uint64_t>();
    md.prng = jm.at("prng").get<std::string>();
    md.pruned = jm.at("pruned").get<bool>();
    md.folded = jm.at("folded").get<bool>();
    md.quantized = jm.at("quantized").get<bool>();
    for (const auto& t : jm.at("transforms")) {
      md.transforms.push_back({t.at("name").get<std::string>(), t.at("params").dump()});
    }
    for (const auto& [name, q] : jm.at("activation_quant").items()) md.activation_quant[name] = quant_from_json(q);
    for (const auto& [k, v] : jm.at("notes").items()) md.notes[k] = v.get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, std::string("malformed model manifest: ") + e.what());
  }
  validate(g);
  return g;
}

void save_model(const ModelGraph& graph, const std::filesystem::path& path) {
  const auto bytes = serialize_model(graph);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(ErrorCode::kIo, "failed writing '" + path.string() + "'");
}

ModelGraph load_model(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  std::vector<char> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_model(std::as_bytes(std::span(raw.data(), raw.size())));
}

}  // namespace seuforge
