#include "authex/package.hpp"

namespace authex::runtime {

namespace {

void put_endpoints(Bytes& out, const std::vector<EndpointDecl>& eps) {
  for (const auto& ep : eps) {
    put_u16(out, ep.io_id);
    if (ep.label.size() > 255) fail(Err::MalformedPackage, "endpoint label too long");
    put_u8(out, static_cast<uint8_t>(ep.label.size()));
    put_bytes(out, to_bytes(ep.label));
  }
}

std::vector<EndpointDecl> read_endpoints(ByteReader& r, size_t n) {
  std::vector<EndpointDecl> eps;
  eps.reserve(n);
  for (size_t i = 0; i < n; i++) {
    EndpointDecl ep;
    ep.io_id = r.u16();
    ep.label = to_string(r.take(r.u8()));
    eps.push_back(std::move(ep));
  }
  return eps;
}

}  // namespace

Bytes ModulePackage::serialize() const {
  Bytes out;
  if (name.size() > 255) fail(Err::MalformedPackage, "module name too long");
  put_u8(out, static_cast<uint8_t>(name.size()));
  put_bytes(out, to_bytes(name));
  put_u16(out, vendor_id);
  auto count = [](const std::vector<EndpointDecl>& v) {
    if (v.size() > 255) fail(Err::MalformedPackage, "too many endpoints");
    return static_cast<uint8_t>(v.size());
  };
  put_u8(out, count(inputs));
  put_u8(out, count(outputs));
  put_u8(out, count(requests));
  put_u8(out, count(handlers));
  put_endpoints(out, inputs);
  put_endpoints(out, outputs);
  put_endpoints(out, requests);
  put_endpoints(out, handlers);
  if (init.size() > 0xffff) fail(Err::MalformedPackage, "init blob too long");
  put_u16(out, static_cast<uint16_t>(init.size()));
  put_bytes(out, init);
  return out;
}

ModulePackage ModulePackage::parse(BytesView raw) {
  try {
    ByteReader r(raw);
    ModulePackage pkg;
    pkg.name = to_string(r.take(r.u8()));
    pkg.vendor_id = r.u16();
    uint8_t n_in = r.u8(), n_out = r.u8(), n_req = r.u8(), n_hnd = r.u8();
    pkg.inputs = read_endpoints(r, n_in);
    pkg.outputs = read_endpoints(r, n_out);
    pkg.requests = read_endpoints(r, n_req);
    pkg.handlers = read_endpoints(r, n_hnd);
    pkg.init = r.take(r.u16());
    if (!r.done()) fail(Err::MalformedPackage, "trailing bytes after package");
    return pkg;
  } catch (const Error& e) {
    if (e.code() == Err::WireError) fail(Err::MalformedPackage, e.what());
    throw;
  }
}

}  // namespace authex::runtime
