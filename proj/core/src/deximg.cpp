#include "dmldroid/deximg.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>

namespace dmldroid::deximg {

namespace {

std::uint32_t read_u32(const Bytes& raw, std::size_t off) {
    return static_cast<std::uint32_t>(raw[off]) |
           (static_cast<std::uint32_t>(raw[off + 1]) << 8) |
           (static_cast<std::uint32_t>(raw[off + 2]) << 16) |
           (static_cast<std::uint32_t>(raw[off + 3]) << 24);
}

void write_u32(Bytes& raw, std::size_t off, std::uint32_t v) {
    raw[off] = static_cast<std::uint8_t>(v & 0xff);
    raw[off + 1] = static_cast<std::uint8_t>((v >> 8) & 0xff);
    raw[off + 2] = static_cast<std::uint8_t>((v >> 16) & 0xff);
    raw[off + 3] = static_cast<std::uint8_t>((v >> 24) & 0xff);
}

struct IdSection {
    const char* field;       // name of the *_off header field
    std::size_t size_off;    // header offset of the count
    std::size_t off_off;     // header offset of the file offset
    std::size_t item_width;  // bytes per item
};

constexpr IdSection kIdSections[] = {
    {"string_ids_off", 56, 60, 4},  {"type_ids_off", 64, 68, 4},
    {"proto_ids_off", 72, 76, 12},  {"field_ids_off", 80, 84, 8},
    {"method_ids_off", 88, 92, 8},  {"class_defs_off", 96, 100, 32},
};

constexpr std::size_t kFileSizeOff = 32;
constexpr std::size_t kHeaderSizeOff = 36;
constexpr std::size_t kEndianOff = 40;
constexpr std::size_t kDataSizeOff = 104;
constexpr std::size_t kDataOffOff = 108;

}  // namespace

DexLayout parse_dex(const Bytes& raw) {
    if (raw.size() < kDexHeaderSize)
        throw FormatError("dex input truncated: " + std::to_string(raw.size()) +
                          " bytes, header needs " + std::to_string(kDexHeaderSize));
    const bool magic_ok = raw[0] == 'd' && raw[1] == 'e' && raw[2] == 'x' && raw[3] == '\n' &&
                          raw[4] == '0' && raw[5] >= '0' && raw[5] <= '9' && raw[6] >= '0' &&
                          raw[6] <= '9' && raw[7] == 0;
    if (!magic_ok) throw FormatError("bad dex magic");

    const std::uint64_t file_size = read_u32(raw, kFileSizeOff);
    if (file_size > raw.size())
        throw CorruptLayoutError("file_size", "declared " + std::to_string(file_size) +
                                                  " exceeds actual " + std::to_string(raw.size()));
    if (file_size < kDexHeaderSize)
        throw CorruptLayoutError("file_size", "declared " + std::to_string(file_size) +
                                                  " smaller than the 112-byte header");
    const std::uint32_t header_size = read_u32(raw, kHeaderSizeOff);
    if (header_size != kDexHeaderSize)
        throw CorruptLayoutError("header_size", "declared " + std::to_string(header_size) +
                                                    ", format fixes it at 112");

    std::uint64_t ids_end = kDexHeaderSize;
    for (const IdSection& sec : kIdSections) {
        const std::uint64_t count = read_u32(raw, sec.size_off);
        if (count == 0) continue;
        const std::uint64_t off = read_u32(raw, sec.off_off);
        if (off < kDexHeaderSize)
            throw CorruptLayoutError(sec.field, "offset " + std::to_string(off) +
                                                    " overlaps the header");
        const std::uint64_t end = off + count * sec.item_width;
        if (end > file_size)
            throw CorruptLayoutError(sec.field, "section [" + std::to_string(off) + "," +
                                                    std::to_string(end) + ") leaves the file");
        ids_end = std::max(ids_end, end);
    }

    const std::uint64_t data_size = read_u32(raw, kDataSizeOff);
    const std::uint64_t data_off = read_u32(raw, kDataOffOff);
    std::uint64_t data_end = ids_end;
    if (data_size > 0) {
        if (data_off > file_size)
            throw CorruptLayoutError("data_off", "offset " + std::to_string(data_off) +
                                                     " beyond file size " + std::to_string(file_size));
        if (data_off < ids_end)
            throw CorruptLayoutError("data_off", "offset " + std::to_string(data_off) +
                                                     " overlaps identifier sections ending at " +
                                                     std::to_string(ids_end));
        data_end = data_off + data_size;
        if (data_end > file_size)
            throw CorruptLayoutError("data_size", "section [" + std::to_string(data_off) + "," +
                                                      std::to_string(data_end) +
                                                      ") leaves the file");
    }

    DexLayout layout;
    layout.file_size = static_cast<std::uint32_t>(file_size);
    layout.header.assign(raw.begin(), raw.begin() + kDexHeaderSize);
    layout.ids.assign(raw.begin() + kDexHeaderSize, raw.begin() + static_cast<std::ptrdiff_t>(ids_end));
    layout.data.assign(raw.begin() + static_cast<std::ptrdiff_t>(ids_end),
                       raw.begin() + static_cast<std::ptrdiff_t>(data_end));
    return layout;
}

Bytes serialize_dex(const DexLayout& layout) {
    Bytes out;
    out.reserve(layout.header.size() + layout.ids.size() + layout.data.size());
    out.insert(out.end(), layout.header.begin(), layout.header.end());
    out.insert(out.end(), layout.ids.begin(), layout.ids.end());
    out.insert(out.end(), layout.data.begin(), layout.data.end());
    return out;
}

Bytes rebuild_dex(const DexLayout& layout) {
    Bytes out = serialize_dex(layout);
    write_u32(out, kFileSizeOff, static_cast<std::uint32_t>(out.size()));
    write_u32(out, kDataSizeOff, static_cast<std::uint32_t>(layout.data.size()));
    write_u32(out, kDataOffOff,
              layout.data.empty() ? 0u
                                  : static_cast<std::uint32_t>(kDexHeaderSize + layout.ids.size()));
    return out;
}

Bytes build_dex(const Bytes& ids_payload, const Bytes& data_payload, const char* version) {
    if (ids_payload.size() % 4 != 0)
        throw ConfigError("ids payload length must be a multiple of 4 (declared as string_ids)");
    const std::size_t total = kDexHeaderSize + ids_payload.size() + data_payload.size();

    Bytes out(kDexHeaderSize, 0);
    out[0] = 'd';
    out[1] = 'e';
    out[2] = 'x';
    out[3] = '\n';
    out[4] = '0';
    out[5] = static_cast<std::uint8_t>(version[0]);
    out[6] = static_cast<std::uint8_t>(version[1]);
    out[7] = 0;

    std::uint64_t h = fnv1a64(std::string(ids_payload.begin(), ids_payload.end()));
    h = fnv1a64(std::string(data_payload.begin(), data_payload.end()), h);
    write_u32(out, 8, static_cast<std::uint32_t>(h & 0xffffffffu));  // checksum stand-in
    for (std::size_t i = 0; i < 20; ++i) {                           // signature stand-in
        h = fnv1a64("sig" + std::to_string(i), h);
        out[12 + i] = static_cast<std::uint8_t>(h & 0xff);
    }

    write_u32(out, kFileSizeOff, static_cast<std::uint32_t>(total));
    write_u32(out, kHeaderSizeOff, kDexHeaderSize);
    write_u32(out, kEndianOff, 0x12345678u);
    write_u32(out, 56, static_cast<std::uint32_t>(ids_payload.size() / 4));
    write_u32(out, 60, ids_payload.empty() ? 0u : static_cast<std::uint32_t>(kDexHeaderSize));
    write_u32(out, kDataSizeOff, static_cast<std::uint32_t>(data_payload.size()));
    write_u32(out, kDataOffOff,
              data_payload.empty() ? 0u
                                   : static_cast<std::uint32_t>(kDexHeaderSize + ids_payload.size()));

    out.insert(out.end(), ids_payload.begin(), ids_payload.end());
    out.insert(out.end(), data_payload.begin(), data_payload.end());
    return out;
}

SectionTriple merge_multidex(const std::vector<DexLayout>& parts) {
    if (parts.empty()) throw DataError("multidex merge of an empty layout list");
    SectionTriple merged;
    for (const DexLayout& p : parts) {
        merged.header.insert(merged.header.end(), p.header.begin(), p.header.end());
        merged.ids.insert(merged.ids.end(), p.ids.begin(), p.ids.end());
        merged.data.insert(merged.data.end(), p.data.begin(), p.data.end());
    }
    return merged;
}

std::vector<DexLayout> load_dex_input(const std::string& path) {
    namespace fs = std::filesystem;
    if (!fs::exists(path)) throw DataError("no such dex input: " + path);
    if (fs::is_regular_file(path)) return {parse_dex(read_file(path))};

    // classes.dex is slot 1, classesN.dex slot N.
    std::vector<std::pair<unsigned long, std::string>> slots;
    for (const auto& entry : fs::directory_iterator(path)) {
        const std::string name = entry.path().filename().string();
        if (name == "classes.dex") {
            slots.emplace_back(1, entry.path().string());
        } else if (name.rfind("classes", 0) == 0 && name.size() > 11 &&
                   name.compare(name.size() - 4, 4, ".dex") == 0) {
            const std::string num = name.substr(7, name.size() - 11);
            if (!num.empty() && std::all_of(num.begin(), num.end(),
                                            [](char c) { return c >= '0' && c <= '9'; }))
                slots.emplace_back(std::stoul(num), entry.path().string());
        }
    }
    if (slots.empty()) throw DataError("directory holds no classes*.dex files: " + path);
    std::sort(slots.begin(), slots.end());
    std::vector<DexLayout> out;
    out.reserve(slots.size());
    for (const auto& [n, file] : slots) out.push_back(parse_dex(read_file(file)));
    return out;
}

SectionImage encode_sections(const SectionTriple& sections, std::size_t width) {
    if (width == 0) throw ConfigError("section image width must be >= 1");
    const std::size_t l = sections.total();
    if (l == 0) throw DataError("cannot image an empty byte stream");
    const std::size_t height = (l + width - 1) / width;

    SectionImage img;
    img.height = height;
    img.width = width;
    img.red.assign(height * width, 0);
    img.green.assign(height * width, 0);
    img.blue.assign(height * width, 0);
    img.provenance.assign(height * width, SectionImage::Tag::Pad);

    const std::size_t h_end = sections.header.size();
    const std::size_t i_end = h_end + sections.ids.size();
    for (std::size_t i = 0; i < l; ++i) {
        if (i < h_end) {
            img.red[i] = sections.header[i];
            img.provenance[i] = SectionImage::Tag::Header;
        } else if (i < i_end) {
            img.green[i] = sections.ids[i - h_end];
            img.provenance[i] = SectionImage::Tag::Ids;
        } else {
            img.blue[i] = sections.data[i - i_end];
            img.provenance[i] = SectionImage::Tag::Data;
        }
    }
    return img;
}

namespace {

// Fraction of [a0,a1) overlapped by the unit cell [i,i+1).
double cell_overlap(double a0, double a1, std::size_t i) {
    const double lo = std::max(a0, static_cast<double>(i));
    const double hi = std::min(a1, static_cast<double>(i + 1));
    return std::max(0.0, hi - lo);
}

}  // namespace

SectionImage resample_area(const SectionImage& img, std::size_t out_size) {
    if (out_size == 0) throw ConfigError("resample size must be >= 1");
    SectionImage out;
    out.height = out_size;
    out.width = out_size;
    out.red.assign(out_size * out_size, 0);
    out.green.assign(out_size * out_size, 0);
    out.blue.assign(out_size * out_size, 0);
    out.provenance.assign(out_size * out_size, SectionImage::Tag::Pad);

    const double sy = static_cast<double>(img.height) / static_cast<double>(out_size);
    const double sx = static_cast<double>(img.width) / static_cast<double>(out_size);

    for (std::size_t oy = 0; oy < out_size; ++oy) {
        const double y0 = oy * sy, y1 = (oy + 1) * sy;
        const std::size_t yb = static_cast<std::size_t>(y0);
        const std::size_t ye = std::min(img.height, static_cast<std::size_t>(std::ceil(y1)));
        for (std::size_t ox = 0; ox < out_size; ++ox) {
            const double x0 = ox * sx, x1 = (ox + 1) * sx;
            const std::size_t xb = static_cast<std::size_t>(x0);
            const std::size_t xe = std::min(img.width, static_cast<std::size_t>(std::ceil(x1)));

            double r = 0.0, g = 0.0, b = 0.0, area = 0.0;
            double tag_area[4] = {0.0, 0.0, 0.0, 0.0};
            for (std::size_t y = yb; y < ye; ++y) {
                const double wy = cell_overlap(y0, y1, y);
                if (wy <= 0.0) continue;
                for (std::size_t x = xb; x < xe; ++x) {
                    const double w = wy * cell_overlap(x0, x1, x);
                    if (w <= 0.0) continue;
                    const std::size_t i = y * img.width + x;
                    r += w * img.red[i];
                    g += w * img.green[i];
                    b += w * img.blue[i];
                    tag_area[static_cast<std::size_t>(img.provenance[i])] += w;
                    area += w;
                }
            }
            const std::size_t oi = oy * out_size + ox;
            if (area > 0.0) {
                out.red[oi] = static_cast<std::uint8_t>(std::lround(r / area));
                out.green[oi] = static_cast<std::uint8_t>(std::lround(g / area));
                out.blue[oi] = static_cast<std::uint8_t>(std::lround(b / area));
                double best = -1.0;
                for (SectionImage::Tag t : {SectionImage::Tag::Header, SectionImage::Tag::Ids,
                                            SectionImage::Tag::Data, SectionImage::Tag::Pad}) {
                    const double a = tag_area[static_cast<std::size_t>(t)];
                    if (a > best) {
                        best = a;
                        out.provenance[oi] = t;
                    }
                }
            }
        }
    }
    return out;
}

SectionImage encode_rgb_image(const SectionTriple& sections, std::size_t width,
                              std::size_t out_size) {
    return resample_area(encode_sections(sections, width), out_size);
}

Bytes to_ppm(const SectionImage& img) {
    const std::string head =
        "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    Bytes out(head.begin(), head.end());
    out.reserve(out.size() + img.pixels() * 3);
    for (std::size_t i = 0; i < img.pixels(); ++i) {
        out.push_back(img.red[i]);
        out.push_back(img.green[i]);
        out.push_back(img.blue[i]);
    }
    return out;
}

Bytes provenance_to_pgm(const SectionImage& img) {
    const std::string head =
        "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    Bytes out(head.begin(), head.end());
    out.reserve(out.size() + img.pixels());
    static constexpr std::uint8_t kGray[4] = {0, 64, 128, 192};  // pad, H, I, D
    for (SectionImage::Tag t : img.provenance)
        out.push_back(kGray[static_cast<std::size_t>(t)]);
    return out;
}

void write_ppm(const std::string& path, const SectionImage& img) {
    write_file(path, to_ppm(img));
}

void write_provenance_pgm(const std::string& path, const SectionImage& img) {
    write_file(path, provenance_to_pgm(img));
}

nn::Matrix image_to_row(const SectionImage& img) {
    nn::Matrix row(1, img.pixels() * 3);
    for (std::size_t i = 0; i < img.pixels(); ++i) {
        row(0, i * 3 + 0) = img.red[i] / 255.0;
        row(0, i * 3 + 1) = img.green[i] / 255.0;
        row(0, i * 3 + 2) = img.blue[i] / 255.0;
    }
    return row;
}

IfEncoderConfig IfEncoderConfig::desk() {
    IfEncoderConfig cfg;
    cfg.stages = {{8, true}, {16, true}};
    return cfg;
}

std::size_t IfEncoderConfig::flatten_dim() const {
    std::size_t size = in_size, channels = in_channels;
    for (const CnnStage& s : stages) {
        if (size < 3) throw DimensionError("cnn stage input collapsed below the 3x3 kernel");
        size -= 2;
        channels = s.out_channels;
        if (s.pool_after) size /= 2;
    }
    return size * size * channels;
}

IfEncoder::IfEncoder(IfEncoderConfig cfg, nn::ParamStore& store, Rng& rng, std::string prefix)
    : cfg_(std::move(cfg)), store_(&store), prefix_(std::move(prefix)) {
    if (cfg_.stages.empty()) throw ConfigError("IfEncoder needs at least one conv stage");
    const std::size_t flat = cfg_.flatten_dim();
    if (!store_->has(prefix_ + ".conv1.w")) {
        std::size_t cin = cfg_.in_channels;
        for (std::size_t s = 0; s < cfg_.stages.size(); ++s) {
            const std::string layer = prefix_ + ".conv" + std::to_string(s + 1);
            store_->create_glorot(layer + ".w", 9 * cin, cfg_.stages[s].out_channels, rng);
            store_->create(layer + ".b", 1, cfg_.stages[s].out_channels);
            cin = cfg_.stages[s].out_channels;
        }
        store_->create_glorot(prefix_ + ".fc1.w", flat, cfg_.embed_dim, rng);
        store_->create(prefix_ + ".fc1.b", 1, cfg_.embed_dim);
        store_->create(prefix_ + ".fc2.w", cfg_.embed_dim, 1);
        store_->create(prefix_ + ".fc2.b", 1, 1);
    } else if (store_->value(prefix_ + ".fc1.w").rows() != flat) {
        throw DimensionError("stored " + prefix_ + ".fc1.w expects flatten dim " +
                             std::to_string(store_->value(prefix_ + ".fc1.w").rows()) +
                             ", config computes " + std::to_string(flat));
    }
}

IfEncoder::Out IfEncoder::forward(nn::Tape& t, nn::Tape::Value img_rows, bool training) const {
    const std::size_t expected = cfg_.in_size * cfg_.in_size * cfg_.in_channels;
    if (t.value(img_rows).cols() != expected)
        throw DimensionError("image rows have " + std::to_string(t.value(img_rows).cols()) +
                             " values, encoder expects " + std::to_string(expected));
    nn::Tape::Value h = img_rows;
    std::size_t size = cfg_.in_size, cin = cfg_.in_channels;
    for (std::size_t s = 0; s < cfg_.stages.size(); ++s) {
        const std::string layer = prefix_ + ".conv" + std::to_string(s + 1);
        h = t.relu(t.conv2d(h, t.param(layer + ".w"), t.param(layer + ".b"),
                            size, size, cin, cfg_.stages[s].out_channels));
        size -= 2;
        cin = cfg_.stages[s].out_channels;
        if (cfg_.stages[s].pool_after) {
            h = t.maxpool2(h, size, size, cin);
            size /= 2;
        }
    }
    auto emb = t.relu(t.add_rowvec(t.matmul(h, t.param(prefix_ + ".fc1.w")),
                                   t.param(prefix_ + ".fc1.b")));
    auto logit = t.add_rowvec(t.matmul(emb, t.param(prefix_ + ".fc2.w")),
                              t.param(prefix_ + ".fc2.b"));
    return Out{emb, logit};
}

nn::Matrix IfEncoder::encode(const nn::Matrix& img_rows) const {
    nn::Tape t(store_);
    return t.value(forward(t, t.input(img_rows), false).embedding);
}

}  // namespace dmldroid::deximg
