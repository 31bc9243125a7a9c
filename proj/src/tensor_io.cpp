#include "warpcell/tensor_io.hpp"

#include <bit>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace warpcell {

static_assert(std::endian::native == std::endian::little,
              "tensor blobs are little-endian; big-endian hosts are unsupported");

void write_tensor(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_tensor: cannot open " + path);
  out << "dims:";
  for (int d : t.dims) out << " " << d;
  out << "\n";
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!out) throw std::runtime_error("write_tensor: short write to " + path);
}

Tensor read_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_tensor: cannot open " + path);
  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error("read_tensor: missing header in " + path);
  std::istringstream hs(header);
  std::string tag;
  hs >> tag;
  if (tag != "dims:") throw std::runtime_error("read_tensor: bad header in " + path);
  std::vector<int> dims;
  int d;
  while (hs >> d) dims.push_back(d);

  Tensor t(dims);
  in.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(t.data.size() * sizeof(double))) {
    throw std::runtime_error("read_tensor: truncated blob in " + path);
  }
  return t;
}

}  // namespace warpcell
