#include "canet/image_io.hpp"

#include <png.h>

#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>

#include "canet/tensor.hpp"

namespace canet {

namespace {

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& why) {
    throw DataError("cannot read image '" + path.string() + "': " + why);
}

Image8 read_png(const std::filesystem::path& path) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.c_str())) fail(path, png.message);
    const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
    png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    Image8 image;
    image.width = png.width;
    image.height = png.height;
    image.channels = color ? 3 : 1;
    image.pixels.resize(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, image.pixels.data(), 0, nullptr)) {
        std::string why = png.message;
        png_image_free(&png);
        fail(path, why);
    }
    return image;
}

class PnmReader {
public:
    PnmReader(const std::filesystem::path& path, std::vector<char> bytes) : path_(path), bytes_(std::move(bytes)) {}

    std::size_t next_number() {
        skip_space_and_comments();
        if (pos_ >= bytes_.size() || !std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
            fail(path_, "malformed PNM header");
        }
        std::size_t value = 0;
        while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
            value = value * 10 + static_cast<std::size_t>(bytes_[pos_++] - '0');
        }
        return value;
    }

    void skip_single_space() {
        if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
            fail(path_, "malformed PNM header");
        }
        ++pos_;
    }

    std::size_t position() const { return pos_; }
    const std::vector<char>& bytes() const { return bytes_; }

private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    const std::filesystem::path& path_;
    std::vector<char> bytes_;
    std::size_t pos_ = 2;
};

Image8 read_pnm(const std::filesystem::path& path, std::vector<char> bytes) {
    const char kind = bytes[1];
    const bool ascii = kind == '2' || kind == '3';
    Image8 image;
    image.channels = (kind == '3' || kind == '6') ? 3 : 1;
    PnmReader reader(path, std::move(bytes));
    image.width = reader.next_number();
    image.height = reader.next_number();
    const std::size_t maxval = reader.next_number();
    if (image.width == 0 || image.height == 0) fail(path, "empty image");
    if (maxval == 0 || maxval > 255) fail(path, "only 8-bit PNM is supported (maxval " + std::to_string(maxval) + ")");
    const std::size_t count = image.width * image.height * image.channels;
    image.pixels.resize(count);
    if (ascii) {
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t v = reader.next_number();
            if (v > maxval) fail(path, "sample exceeds maxval");
            image.pixels[i] = static_cast<std::uint8_t>(v * 255 / maxval);
        }
    } else {
        reader.skip_single_space();
        const auto& raw = reader.bytes();
        if (raw.size() - reader.position() < count) fail(path, "truncated pixel data");
        for (std::size_t i = 0; i < count; ++i) {
            const auto v = static_cast<std::uint8_t>(raw[reader.position() + i]);
            image.pixels[i] = static_cast<std::uint8_t>(static_cast<std::size_t>(v) * 255 / maxval);
        }
    }
    return image;
}

}  // namespace

Image8 read_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path, "file not found or unreadable");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() >= 8 && static_cast<unsigned char>(bytes[0]) == 0x89 && bytes[1] == 'P' && bytes[2] == 'N' &&
        bytes[3] == 'G') {
        return read_png(path);
    }
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] >= '2' && bytes[1] <= '6' && bytes[1] != '4') {
        return read_pnm(path, std::move(bytes));
    }
    fail(path, "unsupported format (expected PNG, PGM or PPM)");
}

void write_pnm(const std::filesystem::path& path, const Image8& image) {
    if (image.channels != 1 && image.channels != 3) {
        throw DataError("write_pnm: unsupported channel count " + std::to_string(image.channels));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write image '" + path.string() + "'");
    out << (image.channels == 1 ? "P5" : "P6") << '\n' << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw DataError("failed writing image '" + path.string() + "'");
}

void write_png(const std::filesystem::path& path, const Image8& image) {
    if (image.channels != 1 && image.channels != 3) throw DataError("write_png: channels must be 1 or 3");
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width);
    png.height = static_cast<png_uint_32>(image.height);
    png.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&png, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
        std::string why = png.message;
        png_image_free(&png);
        throw DataError("cannot write '" + path.string() + "': " + why);
    }
}

}  // namespace canet
