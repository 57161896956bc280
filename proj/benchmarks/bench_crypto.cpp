#include <benchmark/benchmark.h>

#include "authex/harness.hpp"

using namespace authex;
using crypto::AeadNonce;
using crypto::CipherSuite;
using crypto::Key128;

namespace {

Bytes payload(size_t n) { return crypto::Rng(42).bytes(n); }

void BM_Sha256(benchmark::State& state) {
  Bytes data = payload(static_cast<size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(crypto::sha256(data));
  state.SetBytesProcessed(static_cast<int64_t>(state.iterations()) * state.range(0));
}
BENCHMARK(BM_Sha256)->Arg(64)->Arg(1024)->Arg(16384);

void BM_Kdf128(benchmark::State& state) {
  Key128 parent = crypto::Rng(1).key();
  Bytes data = payload(32);
  for (auto _ : state)
    benchmark::DoNotOptimize(crypto::kdf128(BytesView(parent.bytes.data(), 16), data));
}
BENCHMARK(BM_Kdf128);

void BM_AeadSeal(benchmark::State& state) {
  Key128 key = crypto::Rng(2).key();
  Bytes pt = payload(static_cast<size_t>(state.range(0)));
  Bytes aad = payload(5);
  for (auto _ : state)
    benchmark::DoNotOptimize(
        crypto::aead_seal(CipherSuite::AesGcm128, key, AeadNonce::counter(1), pt, aad));
  state.SetBytesProcessed(static_cast<int64_t>(state.iterations()) * state.range(0));
}
BENCHMARK(BM_AeadSeal)->Arg(16)->Arg(64)->Arg(256);

void BM_AeadOpen(benchmark::State& state) {
  Key128 key = crypto::Rng(3).key();
  Bytes pt = payload(static_cast<size_t>(state.range(0)));
  Bytes aad = payload(5);
  auto sealed = crypto::aead_seal(CipherSuite::AesGcm128, key, AeadNonce::counter(1), pt, aad);
  for (auto _ : state)
    benchmark::DoNotOptimize(crypto::aead_open(CipherSuite::AesGcm128, key, AeadNonce::counter(1),
                                               sealed.ciphertext, sealed.tag, aad));
  state.SetBytesProcessed(static_cast<int64_t>(state.iterations()) * state.range(0));
}
BENCHMARK(BM_AeadOpen)->Arg(16)->Arg(64)->Arg(256);

void BM_MacTag(benchmark::State& state) {
  Key128 key = crypto::Rng(4).key();
  Bytes data = payload(48);
  for (auto _ : state) benchmark::DoNotOptimize(crypto::mac_tag(key, data));
}
BENCHMARK(BM_MacTag);

/// End-to-end: one direct request over the simulated smart-home deployment
/// (seal + route + handler + sealed reply + open).
void BM_DirectRequestRoundTrip(benchmark::State& state) {
  static const char* text = R"({
    "nodes": [
      {"name": "nw", "address": "mem://nw", "flavor": "sgx-sim"},
      {"name": "ng", "address": "mem://ng", "flavor": "trustzone"}
    ],
    "modules": [
      {"name": "svc", "node": "nw", "behavior": "echo", "vendor_id": 1,
       "handlers": {"Echo": 0}},
      {"name": "peer", "node": "ng", "behavior": "echo", "vendor_id": 1,
       "handlers": {"Echo": 0}}
    ],
    "connections": [
      {"name": "ping", "from": "deployer", "to": "svc.Echo", "direct": true}
    ]
  })";
  harness::ensure_behaviors_registered();
  deploy::Descriptor d = deploy::Descriptor::parse(text);
  harness::Scenario s(d, 99);
  Bytes msg = payload(16);
  for (auto _ : state) {
    auto reply = s.deployer().send_direct(d, s.state(), "ping", msg);
    if (!reply || *reply != msg) state.SkipWithError("echo round trip failed");
  }
}
// Fixed iteration count: a direct connection's 16-bit nonce space bounds the
// number of sends before the channel needs re-establishing.
BENCHMARK(BM_DirectRequestRoundTrip)->Iterations(20000);

}  // namespace

BENCHMARK_MAIN();
