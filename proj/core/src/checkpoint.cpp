#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "recindial/model.hpp"
#include "recindial/text.hpp"

namespace recindial {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'R', 'E', 'C', 'I', 'N', 'D', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("checkpoint truncated");
    return v;
}

json header_of(const RecModel& m, std::size_t entities, std::size_t relations) {
    const auto& c = m.config;
    return json{{"model",
                 {{"layers", c.layers}, {"heads", c.heads}, {"width", c.width}, {"ff_width", c.ff_width},
                  {"max_position", c.max_position}, {"general_size", c.general_size},
                  {"item_partition_size", c.item_partition_size}, {"dropout", c.dropout}, {"seed", c.seed}}},
                {"variant", {{"vocab_pointer", m.variant.vocab_pointer}, {"knowledge", m.variant.knowledge}}},
                {"kg", {{"dim", m.kg_shape.dim}, {"attn_dim", m.kg_shape.attn_dim}, {"layers", m.kg_shape.layers},
                        {"entities", entities}, {"relations", relations}}},
                {"vocab_hash", std::to_string(m.vocab_hash)}};
}

}  // namespace

RecModel RecModel::create(const ModelConfig& config, const Variant& variant, const KGShape& kg_shape,
                          const Vocabulary& vocab, const KnowledgeGraph& graph) {
    ModelConfig cfg = config;
    cfg.general_size = vocab.general_size();
    cfg.item_partition_size = vocab.item_partition_size();
    std::mt19937_64 rng(cfg.seed);
    TransformerLM lm(cfg, rng);
    KGParams kg = KGParams::init(graph, kg_shape, vocab.item_partition_size(), rng);
    return RecModel{cfg, variant, kg_shape, std::move(lm), std::move(kg), vocab.hash()};
}

TensorList RecModel::trainable() {
    TensorList out = lm.params().tensors();
    if (variant.knowledge) {
        auto k = kg.tensors();
        out.insert(out.end(), k.begin(), k.end());
    }
    return out;
}

TensorList RecModel::all_tensors() {
    TensorList out = lm.params().tensors();
    auto k = kg.tensors();
    out.insert(out.end(), k.begin(), k.end());
    return out;
}

void save_checkpoint(const std::filesystem::path& path, RecModel& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
    const std::size_t relations = model.kg.relation.empty() ? 0 : model.kg.relation.front().size();
    const std::string header = header_of(model, model.kg.base.rows(), relations).dump();
    out.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(out, kVersion);
    write_pod<std::uint64_t>(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    const auto tensors = model.all_tensors();
    write_pod<std::uint64_t>(out, tensors.size());
    for (const auto& t : tensors) {
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        write_pod<std::uint64_t>(out, t.value->rows());
        write_pod<std::uint64_t>(out, t.value->cols());
        out.write(reinterpret_cast<const char*>(t.value->data()), static_cast<std::streamsize>(t.value->size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

RecModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw DataError("not a checkpoint file: " + path.string());
    const auto version = read_pod<std::uint32_t>(in);
    if (version != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
    const auto hlen = read_pod<std::uint64_t>(in);
    std::string header(hlen, '\0');
    in.read(header.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw DataError("checkpoint truncated");
    const json h = json::parse(header);

    ModelConfig cfg;
    const auto& jm = h.at("model");
    cfg.layers = jm.at("layers");
    cfg.heads = jm.at("heads");
    cfg.width = jm.at("width");
    cfg.ff_width = jm.at("ff_width");
    cfg.max_position = jm.at("max_position");
    cfg.general_size = jm.at("general_size");
    cfg.item_partition_size = jm.at("item_partition_size");
    cfg.dropout = jm.at("dropout");
    cfg.seed = jm.at("seed");
    Variant variant{h.at("variant").at("vocab_pointer"), h.at("variant").at("knowledge")};
    KGShape shape{h.at("kg").at("dim"), h.at("kg").at("attn_dim"), h.at("kg").at("layers")};
    const std::size_t entities = h.at("kg").at("entities");
    const std::size_t relations = h.at("kg").at("relations");

    // Build a correctly shaped model, then fill tensors by name.
    KnowledgeGraph shape_graph(entities, relations, {});
    std::mt19937_64 rng(0);
    ModelConfig init_cfg = cfg;
    TransformerLM lm(init_cfg, rng);
    KGParams kg = KGParams::init(shape_graph, shape, cfg.item_partition_size, rng);
    RecModel model{cfg, variant, shape, std::move(lm), std::move(kg), std::stoull(h.at("vocab_hash").get<std::string>())};

    auto tensors = model.all_tensors();
    std::unordered_map<std::string, Matrix*> by_name;
    for (auto& t : tensors) by_name.emplace(t.name, t.value);
    const auto count = read_pod<std::uint64_t>(in);
    if (count != tensors.size()) throw DataError("checkpoint tensor count mismatch");
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto nlen = read_pod<std::uint32_t>(in);
        std::string name(nlen, '\0');
        in.read(name.data(), nlen);
        const auto rows = read_pod<std::uint64_t>(in);
        const auto cols = read_pod<std::uint64_t>(in);
        auto it = by_name.find(name);
        if (it == by_name.end()) throw DataError("unexpected tensor in checkpoint: " + name);
        Matrix& m = *it->second;
        if (m.rows() != rows || m.cols() != cols) throw DataError("tensor shape mismatch in checkpoint: " + name);
        in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
        if (!in) throw DataError("checkpoint truncated in tensor " + name);
    }
    return model;
}

std::uint64_t file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path.string());
    std::uint64_t h = fnv1a64("");
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        h = fnv1a64(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
    }
    return h;
}

// ---------------------------------------------------------------------------

Recommender::Recommender(const RecModel& model, const Vocabulary& vocab, const KnowledgeGraph& graph)
    : model_(&model), vocab_(&vocab) {
    if (model.vocab_hash != vocab.hash()) throw DataError("checkpoint was trained with a different vocabulary");
    if (model.variant.knowledge) H_ = rgcn_forward(graph, model.kg);
}

std::vector<double> Recommender::bias(std::span<const EntityId> entities) const {
    if (!model_->variant.knowledge) return {};
    return knowledge_bias(entities, H_, model_->kg);
}

RecommendationResult Recommender::recommend(const std::vector<TokenId>& context, std::span<const EntityId> entities,
                                            DecodeOptions options) const {
    options.vocab_pointer = model_->variant.vocab_pointer;
    const auto b = bias(entities);
    const auto ctx = options.vocab_pointer ? context : strip_markers(context, *vocab_);
    return ::recindial::recommend(generation_prefix(ctx, *vocab_), model_->lm, b, *vocab_, options);
}

}  // namespace recindial
