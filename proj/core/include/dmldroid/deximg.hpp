#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmldroid/nn/param_store.hpp"
#include "dmldroid/nn/tape.hpp"

namespace dmldroid::deximg {

inline constexpr std::size_t kDexHeaderSize = 112;

// The three byte spans a classes.dex splits into: the 112-byte header, the
// identifier tables (string_ids through class_defs, with unclaimed gaps
// attached to the following region), and the data section.
struct DexLayout {
    Bytes header;
    Bytes ids;
    Bytes data;
    std::uint32_t file_size = 0;  // as declared in the header

    std::size_t ids_begin() const { return kDexHeaderSize; }
    std::size_t ids_end() const { return kDexHeaderSize + ids.size(); }
    std::size_t data_begin() const { return ids_end(); }
    std::size_t data_end() const { return ids_end() + data.size(); }
};

// Splits raw bytes by the header's section table. Bad magic or a short file
// is a FormatError; offsets that overlap or leave the file are a
// CorruptLayoutError naming the offending header field.
DexLayout parse_dex(const Bytes& raw);

// header || ids || data, byte-for-byte.
Bytes serialize_dex(const DexLayout& layout);

// Same concatenation but with the header's data_off/data_size/file_size
// rewritten to match the actual section lengths. Use after editing section
// payloads in a way that changes their size.
Bytes rebuild_dex(const DexLayout& layout);

// Synthesizes a well-formed single-dex file around the given payloads. The
// ids payload is declared as string_ids, so its length must be a multiple of
// 4. Checksum/signature bytes are derived deterministically from the content.
Bytes build_dex(const Bytes& ids_payload, const Bytes& data_payload,
                const char* version = "35");

struct SectionTriple {
    Bytes header;
    Bytes ids;
    Bytes data;
    std::size_t total() const { return header.size() + ids.size() + data.size(); }
};

// Concatenates sections kind-wise across dex files in classes.dex,
// classes2.dex, ... order. Sections of different kinds never interleave.
SectionTriple merge_multidex(const std::vector<DexLayout>& parts);

// Reads either a single .dex file or a directory holding classes.dex,
// classes2.dex, ... (numeric suffix order).
std::vector<DexLayout> load_dex_input(const std::string& path);

struct SectionImage {
    enum class Tag : std::uint8_t { Pad = 0, Header = 1, Ids = 2, Data = 3 };

    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> red, green, blue;  // height*width each
    std::vector<Tag> provenance;

    std::size_t pixels() const { return height * width; }
};

// One pixel per byte of header || ids || data, row-major at the given width,
// zero-padded tail. A byte lights exactly one channel: header bytes the red
// one, identifier bytes the green one, data bytes the blue one.
SectionImage encode_sections(const SectionTriple& sections, std::size_t width = 256);

// Per-channel area-average resample to out_size x out_size, rounded to the
// nearest byte. Provenance of an output pixel is the tag covering the most
// input area (earlier section wins ties).
SectionImage resample_area(const SectionImage& img, std::size_t out_size = 64);

// encode_sections then resample_area.
SectionImage encode_rgb_image(const SectionTriple& sections, std::size_t width = 256,
                              std::size_t out_size = 64);

Bytes to_ppm(const SectionImage& img);             // binary P6
Bytes provenance_to_pgm(const SectionImage& img);  // P5 with H=64, I=128, D=192, pad=0
void write_ppm(const std::string& path, const SectionImage& img);
void write_provenance_pgm(const std::string& path, const SectionImage& img);

// Flattens to one matrix row in HWC order, bytes scaled to [0,1].
nn::Matrix image_to_row(const SectionImage& img);

// The image-branch CNN. The published chain is (3,64,64) -> Conv 32 ->
// Conv 64 -> Pool -> flatten 57600 -> FC 128 -> 1; stages are configurable so
// a lighter chain with the same structure can run on small hardware.
struct CnnStage {
    std::size_t out_channels = 0;
    bool pool_after = false;

    bool operator==(const CnnStage&) const = default;
};

struct IfEncoderConfig {
    std::size_t in_size = 64;
    std::size_t in_channels = 3;
    std::vector<CnnStage> stages = {{32, false}, {64, true}};
    std::size_t embed_dim = 128;

    // Reduced channel widths with pooling after every conv; same depth and
    // layer kinds, sized for single-core training.
    static IfEncoderConfig desk();

    std::size_t flatten_dim() const;

    bool operator==(const IfEncoderConfig&) const = default;
};

class IfEncoder {
public:
    IfEncoder(IfEncoderConfig cfg, nn::ParamStore& store, Rng& rng,
              std::string prefix = "if");

    struct Out {
        nn::Tape::Value embedding;
        nn::Tape::Value logit;
    };
    Out forward(nn::Tape& t, nn::Tape::Value img_rows, bool training) const;
    nn::Matrix encode(const nn::Matrix& img_rows) const;

    const IfEncoderConfig& config() const { return cfg_; }

private:
    IfEncoderConfig cfg_;
    nn::ParamStore* store_;
    std::string prefix_;
};

}  // namespace dmldroid::deximg
