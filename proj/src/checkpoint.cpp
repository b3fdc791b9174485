#include "icicle/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <vector>

namespace icicle {

namespace {

constexpr char kMagic[4] = {'I', 'C', 'K', 'P'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::vector<std::uint8_t>& buf, std::uint16_t v) {
    buf.push_back(static_cast<std::uint8_t>(v & 0xff));
    buf.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f64(std::vector<std::uint8_t>& buf, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i)
        buf.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
}

void put_string(std::vector<std::uint8_t>& buf, const std::string& s) {
    put_u32(buf, static_cast<std::uint32_t>(s.size()));
    buf.insert(buf.end(), s.begin(), s.end());
}

void put_tensor(std::vector<std::uint8_t>& buf, const TensorF& t) {
    put_u32(buf, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) put_u32(buf, static_cast<std::uint32_t>(d));
    for (double v : t.data) put_f64(buf, v);
}

struct Reader {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw std::runtime_error("ICKP: truncated payload");
    }
    std::uint16_t u16() {
        need(2);
        auto v = static_cast<std::uint16_t>(buf[pos] | (buf[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
        pos += 8;
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str() {
        std::size_t n = u32();
        need(n);
        std::string s(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                      buf.begin() + static_cast<std::ptrdiff_t>(pos + n));
        pos += n;
        return s;
    }
    TensorF tensor() {
        std::size_t rank = u32();
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = u32();
        TensorF t(shape);
        for (auto& v : t.data) v = f64();
        return t;
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const IcicleModel& model) {
    model.validate();
    std::vector<std::uint8_t> buf;
    buf.insert(buf.end(), kMagic, kMagic + 4);
    put_u16(buf, kVersion);

    put_u32(buf, static_cast<std::uint32_t>(model.cfg.image_h));
    put_u32(buf, static_cast<std::uint32_t>(model.cfg.image_w));
    put_u32(buf, static_cast<std::uint32_t>(model.cfg.image_c));
    put_u32(buf, static_cast<std::uint32_t>(model.cfg.backbone.size()));
    for (const ConvLayerSpec& l : model.cfg.backbone) {
        put_u32(buf, static_cast<std::uint32_t>(l.kernel));
        put_u32(buf, static_cast<std::uint32_t>(l.stride));
        put_u32(buf, static_cast<std::uint32_t>(l.pad));
        put_u32(buf, static_cast<std::uint32_t>(l.out_channels));
    }
    put_u32(buf, static_cast<std::uint32_t>(model.cfg.proto_dim));
    put_u32(buf, static_cast<std::uint32_t>(model.cfg.protos_per_class));
    put_f64(buf, model.cfg.eta);

    auto params = model.shared_params();
    put_u32(buf, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, p] : params) {
        put_string(buf, name);
        put_tensor(buf, *p);
    }

    put_u32(buf, static_cast<std::uint32_t>(model.heads.size()));
    for (const PrototypeHead& head : model.heads) {
        put_u32(buf, static_cast<std::uint32_t>(head.task_id));
        put_u32(buf, static_cast<std::uint32_t>(head.classes.size()));
        for (int c : head.classes) put_u32(buf, static_cast<std::uint32_t>(c));
        put_u32(buf, static_cast<std::uint32_t>(head.protos_per_class));
        put_tensor(buf, head.prototypes);
        put_u32(buf, static_cast<std::uint32_t>(head.assignment.size()));
        buf.insert(buf.end(), head.assignment.begin(), head.assignment.end());
    }

    auto crc = static_cast<std::uint32_t>(crc32(0L, buf.data(), static_cast<uInt>(buf.size())));
    put_u32(buf, crc);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

IcicleModel load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
    if (buf.size() < 10 || std::memcmp(buf.data(), kMagic, 4) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i)
        stored |= static_cast<std::uint32_t>(buf[buf.size() - 4 + i]) << (8 * i);
    auto crc = static_cast<std::uint32_t>(
        crc32(0L, buf.data(), static_cast<uInt>(buf.size() - 4)));
    if (crc != stored) throw std::runtime_error("load_checkpoint: checksum mismatch in " + path);

    Reader r{buf, 4};
    if (r.u16() != kVersion) throw std::runtime_error("load_checkpoint: unsupported version");

    ModelConfig cfg;
    cfg.image_h = r.u32();
    cfg.image_w = r.u32();
    cfg.image_c = r.u32();
    cfg.backbone.resize(r.u32());
    for (ConvLayerSpec& l : cfg.backbone) {
        l.kernel = static_cast<int>(r.u32());
        l.stride = static_cast<int>(r.u32());
        l.pad = static_cast<int>(r.u32());
        l.out_channels = r.u32();
    }
    cfg.proto_dim = r.u32();
    cfg.protos_per_class = r.u32();
    cfg.eta = r.f64();

    IcicleModel model = IcicleModel::build(cfg, 0);
    auto params = model.shared_params();
    std::size_t n_params = r.u32();
    if (n_params != params.size())
        throw std::runtime_error("load_checkpoint: parameter block count mismatch");
    for (auto& [name, p] : params) {
        std::string got = r.str();
        if (got != name)
            throw std::runtime_error("load_checkpoint: unexpected parameter block " + got);
        TensorF t = r.tensor();
        if (!same_shape(t, *p))
            throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
        *p = std::move(t);
    }

    std::size_t n_heads = r.u32();
    for (std::size_t h = 0; h < n_heads; ++h) {
        int task_id = static_cast<int>(r.u32());
        std::size_t n_classes = r.u32();
        std::vector<int> classes(n_classes);
        for (auto& c : classes) c = static_cast<int>(r.u32());
        std::size_t k = r.u32();
        TensorF protos = r.tensor();
        PrototypeHead head = PrototypeHead::make(task_id, std::move(classes), k,
                                                 std::move(protos));
        std::size_t n_assign = r.u32();
        if (n_assign != head.assignment.size())
            throw std::runtime_error("load_checkpoint: assignment size mismatch");
        r.need(n_assign);
        std::copy(buf.begin() + static_cast<std::ptrdiff_t>(r.pos),
                  buf.begin() + static_cast<std::ptrdiff_t>(r.pos + n_assign),
                  head.assignment.begin());
        r.pos += n_assign;
        head.validate();
        model.heads.push_back(std::move(head));
    }
    if (r.pos != buf.size() - 4) throw std::runtime_error("load_checkpoint: trailing bytes");
    model.validate();
    return model;
}

}  // namespace icicle
