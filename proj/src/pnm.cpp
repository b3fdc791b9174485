#include "icicle/pnm.hpp"

#include <cctype>
#include <fstream>
#include <stdexcept>

namespace icicle {

namespace {

void save_pnm(const std::string& path, const PnmImage& img, const std::string& comment,
              bool color) {
    std::size_t channels = color ? 3 : 1;
    if (img.channels != channels) throw std::invalid_argument("save_pnm: channel mismatch");
    if (img.pixels.size() != img.width * img.height * channels)
        throw std::invalid_argument("save_pnm: pixel buffer size mismatch");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_pnm: cannot open " + path);
    f << (color ? "P6" : "P5") << "\n";
    if (!comment.empty()) f << "# " << comment << "\n";
    f << img.width << " " << img.height << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (!f) throw std::runtime_error("save_pnm: write failed for " + path);
}

int read_token(std::istream& in) {
    // skips whitespace and '#' comments per the PNM grammar
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {}
        } else if (!std::isspace(c)) {
            break;
        }
    }
    if (c == EOF) throw std::runtime_error("load_pnm: truncated header");
    int value = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    if (!any) throw std::runtime_error("load_pnm: malformed header");
    return value;
}

}  // namespace

void save_ppm(const std::string& path, const PnmImage& img, const std::string& comment) {
    save_pnm(path, img, comment, true);
}

void save_pgm(const std::string& path, const PnmImage& img, const std::string& comment) {
    save_pnm(path, img, comment, false);
}

PnmImage load_pnm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_pnm: cannot open " + path);
    char m0 = 0, m1 = 0;
    f.get(m0);
    f.get(m1);
    if (m0 != 'P' || (m1 != '5' && m1 != '6'))
        throw std::runtime_error("load_pnm: bad magic in " + path);
    PnmImage img;
    img.channels = (m1 == '6') ? 3 : 1;
    img.width = static_cast<std::size_t>(read_token(f));
    img.height = static_cast<std::size_t>(read_token(f));
    int maxval = read_token(f);
    if (maxval != 255) throw std::runtime_error("load_pnm: only maxval 255 is supported");
    // header terminates with exactly one whitespace byte, already consumed
    img.pixels.resize(img.width * img.height * img.channels);
    f.read(reinterpret_cast<char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.size()));
    if (f.gcount() != static_cast<std::streamsize>(img.pixels.size()))
        throw std::runtime_error("load_pnm: truncated payload in " + path);
    return img;
}

}  // namespace icicle
