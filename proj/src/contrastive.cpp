#include "vqseq/contrastive.hpp"

#include <fstream>

namespace vqseq {

AugmentedView augment(const TokenSequence& x, const AugmentConfig& cfg,
                      uint32_t mask_id, StreamRng& rng) {
    cfg.validate();
    AugmentedView view;
    view.ids = x.ids;
    view.zero_rows.assign(x.ids.size(), 0);
    for (size_t i = 0; i < x.ids.size(); ++i) {
        if (!x.valid[i]) continue;
        if (rng.bernoulli(cfg.mask_prob)) view.ids[i] = mask_id;
        if (rng.bernoulli(cfg.dropout_prob)) view.zero_rows[i] = 1;
    }
    return view;
}

namespace {
constexpr char kVqemMagic[4] = {'V', 'Q', 'E', 'M'};
}

void write_vqem_file(const std::string& path, const EmbeddingTable& table) {
    if (table.vectors.size() != table.ids.size() * table.dim)
        throw ShapeError("embedding table shape mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot create " + path);
    put_bytes(out, kVqemMagic, 4);
    put_u32(out, table.dim);
    put_u64(out, table.ids.size());
    for (size_t i = 0; i < table.ids.size(); ++i) {
        const auto& id = table.ids[i];
        if (id.size() > 0xFFFF) throw ShapeError("record id too long");
        put_u16(out, static_cast<uint16_t>(id.size()));
        put_bytes(out, id.data(), id.size());
        for (uint32_t d = 0; d < table.dim; ++d)
            put_f32(out, table.vectors[i * table.dim + d]);
    }
    if (!out) throw IoError("embedding write failed");
}

EmbeddingTable read_vqem_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[4];
    get_bytes(in, magic, 4);
    if (std::memcmp(magic, kVqemMagic, 4) != 0)
        throw ParseError("not a VQEM embedding file");
    EmbeddingTable table;
    table.dim = get_u32(in);
    uint64_t count = get_u64(in);
    table.ids.reserve(count);
    table.vectors.reserve(count * table.dim);
    for (uint64_t i = 0; i < count; ++i) {
        uint16_t id_len = get_u16(in);
        std::string id(id_len, '\0');
        if (id_len) get_bytes(in, id.data(), id_len);
        table.ids.push_back(std::move(id));
        for (uint32_t d = 0; d < table.dim; ++d)
            table.vectors.push_back(get_f32(in));
    }
    return table;
}

}  // namespace vqseq
