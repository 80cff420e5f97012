#include "vqseq/checkpoint.hpp"

#include <charconv>
#include <fstream>

namespace vqseq {

namespace {
constexpr char kMagic[4] = {'V', 'Q', 'W', 'W'};
constexpr uint32_t kVersion = 1;
}  // namespace

const TensorF* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

void write_vqww_file(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot create " + path);
    put_bytes(out, kMagic, 4);
    put_u32(out, ckpt.version);
    put_u64(out, ckpt.metadata.size());
    put_bytes(out, ckpt.metadata.data(), ckpt.metadata.size());
    for (const auto& [name, tensor] : ckpt.tensors) {
        if (name.size() > 0xFFFF) throw ShapeError("tensor name too long");
        put_u16(out, static_cast<uint16_t>(name.size()));
        put_bytes(out, name.data(), name.size());
        put_u32(out, static_cast<uint32_t>(tensor.shape.size()));
        for (size_t d : tensor.shape) put_u32(out, static_cast<uint32_t>(d));
        for (float v : tensor.data) put_f32(out, v);
    }
    if (!out) throw IoError("checkpoint write failed");
}

Checkpoint read_vqww_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[4];
    get_bytes(in, magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw ParseError("not a VQWW checkpoint file");
    Checkpoint ckpt;
    ckpt.version = get_u32(in);
    if (ckpt.version != kVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(ckpt.version));
    uint64_t meta_len = get_u64(in);
    ckpt.metadata.resize(meta_len);
    if (meta_len) get_bytes(in, ckpt.metadata.data(), meta_len);
    while (!at_eof(in)) {
        uint16_t name_len = get_u16(in);
        std::string name(name_len, '\0');
        if (name_len) get_bytes(in, name.data(), name_len);
        uint32_t ndim = get_u32(in);
        std::vector<size_t> shape(ndim);
        for (uint32_t i = 0; i < ndim; ++i) shape[i] = get_u32(in);
        TensorF t(shape);
        for (auto& v : t.data) v = get_f32(in);
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    return ckpt;
}

namespace {

void push_tensor(Checkpoint& ckpt, const std::string& name, const TensorF& t) {
    ckpt.tensors.emplace_back(name, t);
}

TensorF scalar_tensor(float v) {
    TensorF t({1});
    t.data[0] = v;
    return t;
}

void load_into(const Checkpoint& ckpt, const std::string& name, TensorF& dst) {
    const TensorF* src = ckpt.find(name);
    if (!src) throw ConfigMismatchError("checkpoint missing tensor '" + name + "'");
    if (src->shape != dst.shape)
        throw ConfigMismatchError("checkpoint tensor '" + name + "' has wrong shape");
    dst.data = src->data;
}

}  // namespace

Checkpoint model_to_checkpoint(Vqvae<float>& model, const std::string& metadata) {
    Checkpoint ckpt;
    ckpt.metadata = metadata;
    for (auto* slot : model.slots()) {
        push_tensor(ckpt, slot->name, slot->value);
        push_tensor(ckpt, slot->name + ".adam_m", slot->adam_m);
        push_tensor(ckpt, slot->name + ".adam_v", slot->adam_v);
        push_tensor(ckpt, slot->name + ".step", scalar_tensor(static_cast<float>(slot->step_count)));
    }
    push_tensor(ckpt, "codebook.vectors", model.codebook.vectors);
    push_tensor(ckpt, "codebook.counts", model.codebook.counts);
    push_tensor(ckpt, "codebook.sums", model.codebook.sums);
    return ckpt;
}

void model_from_checkpoint(Vqvae<float>& model, const Checkpoint& ckpt) {
    for (auto* slot : model.slots()) {
        load_into(ckpt, slot->name, slot->value);
        load_into(ckpt, slot->name + ".adam_m", slot->adam_m);
        load_into(ckpt, slot->name + ".adam_v", slot->adam_v);
        const TensorF* step = ckpt.find(slot->name + ".step");
        if (!step) throw ConfigMismatchError("checkpoint missing step for " + slot->name);
        slot->step_count = static_cast<int64_t>(step->data.at(0));
        slot->grad.zero();
    }
    load_into(ckpt, "codebook.vectors", model.codebook.vectors);
    load_into(ckpt, "codebook.counts", model.codebook.counts);
    load_into(ckpt, "codebook.sums", model.codebook.sums);
}

LoadedModel load_model_file(const std::string& path) {
    Checkpoint ckpt = read_vqww_file(path);
    LoadedModel out;
    KeyValues kv = parse_key_values(ckpt.metadata);
    out.config = TrainConfig::from_key_values(kv, false);
    for (const auto& [key, value] : kv) {
        if (key == "epoch") {
            uint32_t e{};
            auto res = std::from_chars(value.data(), value.data() + value.size(), e);
            if (res.ec != std::errc{})
                throw ParseError("bad epoch in checkpoint metadata");
            out.epoch = e;
        }
    }
    out.model.init(out.config.dims(), out.config.seed);
    model_from_checkpoint(out.model, ckpt);
    return out;
}

Checkpoint head_to_checkpoint(ProjectionHead<float>& head, const std::string& metadata) {
    Checkpoint ckpt;
    ckpt.metadata = metadata;
    for (auto* slot : head.slots()) push_tensor(ckpt, slot->name, slot->value);
    return ckpt;
}

void head_from_checkpoint(ProjectionHead<float>& head, const Checkpoint& ckpt) {
    const TensorF* l1 = ckpt.find("head.l1.w");
    if (!l1 || l1->shape.size() != 2)
        throw ConfigMismatchError("checkpoint does not contain a projection head");
    head.init(l1->shape[0], l1->shape[1], 0);
    for (auto* slot : head.slots()) load_into(ckpt, slot->name, slot->value);
}

}  // namespace vqseq
