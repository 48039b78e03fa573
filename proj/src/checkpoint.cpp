#include "rrrn/checkpoint.hpp"

#include "rrrn/binary_io.hpp"
#include "rrrn/error.hpp"

namespace rrrn {

namespace {

constexpr std::uint32_t kVersion = 1;

void put_set(binary::Writer& w, const ParameterSet& set) {
    w.u32(static_cast<std::uint32_t>(set.count()));
    for (const auto& t : set.tensors()) {
        w.str(t.name);
        w.u32(static_cast<std::uint32_t>(t.shape.size()));
        for (int d : t.shape) w.u32(static_cast<std::uint32_t>(d));
        for (double v : t.values) w.f32(static_cast<float>(v));
    }
}

ParameterSet get_set(binary::Reader& r) {
    ParameterSet set;
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string name = r.str();
        std::vector<int> shape(r.u32());
        for (auto& d : shape) d = static_cast<int>(r.u32());
        const int idx = set.add(std::move(name), std::move(shape));
        for (auto& v : set.values(idx)) v = r.f32();
    }
    return set;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
    binary::Writer w;
    w.raw("RRCK");
    w.u32(kVersion);
    w.str(format_config(c.config));
    w.u32(static_cast<std::uint32_t>(c.epoch));
    w.f32(c.normalization.vertical_mean);
    w.f32(c.normalization.vertical_std);
    w.f32(c.normalization.horizontal_mean);
    w.f32(c.normalization.horizontal_std);
    w.u64(static_cast<std::uint64_t>(c.adam_steps));
    put_set(w, c.params);
    put_set(w, c.adam_m);
    put_set(w, c.adam_v);
    w.u32(static_cast<std::uint32_t>(c.log.size()));
    for (const auto& e : c.log) {
        w.u32(static_cast<std::uint32_t>(e.epoch));
        w.f64(e.cls);
        w.f64(e.rb);
        w.f64(e.cor);
        w.f64(e.total);
        w.f64(e.train_accuracy);
    }
    return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    binary::Reader r(bytes);
    if (r.raw(4) != "RRCK") throw Error(ErrorCode::IoError, "not a checkpoint (bad magic)");
    if (const auto v = r.u32(); v != kVersion) {
        throw Error(ErrorCode::IoError, "unsupported checkpoint version " + std::to_string(v));
    }
    Checkpoint c;
    c.config = parse_config(r.str());
    c.epoch = static_cast<int>(r.u32());
    c.normalization.vertical_mean = r.f32();
    c.normalization.vertical_std = r.f32();
    c.normalization.horizontal_mean = r.f32();
    c.normalization.horizontal_std = r.f32();
    c.adam_steps = static_cast<long long>(r.u64());
    c.params = get_set(r);
    c.adam_m = get_set(r);
    c.adam_v = get_set(r);
    c.log.resize(r.u32());
    for (auto& e : c.log) {
        e.epoch = static_cast<int>(r.u32());
        e.cls = r.f64();
        e.rb = r.f64();
        e.cor = r.f64();
        e.total = r.f64();
        e.train_accuracy = r.f64();
    }
    if (!r.at_end()) throw Error(ErrorCode::IoError, "trailing bytes after checkpoint");
    return c;
}

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
    binary::write_file(path, encode_checkpoint(checkpoint));
}

void round_to_storage(ParameterSet& set) {
    for (int i = 0; i < set.count(); ++i) {
        for (auto& v : set.values(i)) v = static_cast<double>(static_cast<float>(v));
    }
}

Checkpoint read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(binary::read_file(path)); }

}  // namespace rrrn
