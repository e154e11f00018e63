// Copyright 2026 The pprt Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "pprt/hcrypt.hpp"

#include <sodium.h>

#include <algorithm>
#include <cstring>
#include <limits>
#include <mutex>

namespace pprt::hcrypt {
namespace {

void ensure_sodium() {
  static std::once_flag once;
  std::call_once(once, [] {
    if (sodium_init() < 0) throw HcryptError("libsodium initialization failed");
  });
}

constexpr std::uint8_t kSeparator = 0x1F;

std::size_t expected_indices(LabelKind kind) {
  switch (kind) {
    case LabelKind::kFactor:
      return 2;
    case LabelKind::kCoeff:
      return 4;
    case LabelKind::kPis:
    case LabelKind::kBidKey:
      return 0;
  }
  throw HcryptError("unknown label kind");
}

void append_be32(Bytes& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

// Symmetric key for the sealed box: SHA-256(shared | ephemeral_pk | recipient_pk).
std::array<std::uint8_t, 32> seal_key(const std::uint8_t* shared, const std::uint8_t* epk,
                                      const std::uint8_t* rpk) {
  crypto_hash_sha256_state st;
  crypto_hash_sha256_init(&st);
  crypto_hash_sha256_update(&st, shared, 32);
  crypto_hash_sha256_update(&st, epk, 32);
  crypto_hash_sha256_update(&st, rpk, 32);
  std::array<std::uint8_t, 32> out{};
  crypto_hash_sha256_final(&st, out.data());
  return out;
}

}  // namespace

Ciphertext enc(std::int64_t m, Keystream k, Modulus modulus) {
  if (k.value > modulus.mask()) throw HcryptError("keystream out of range for modulus");
  if (modulus.bits() == 64) {
    if (m == std::numeric_limits<std::int64_t>::min())
      throw HcryptError("plaintext magnitude must be below M/2");
  } else {
    const auto half = static_cast<std::int64_t>(modulus.half());
    if (m >= half || m <= -half) throw HcryptError("plaintext magnitude must be below M/2");
  }
  const std::uint64_t residue = static_cast<std::uint64_t>(m) & modulus.mask();
  return Ciphertext{(residue + k.value) & modulus.mask(), modulus};
}

std::int64_t dec(Ciphertext c, Keystream k) {
  const Modulus modulus = c.modulus;
  if (c.value > modulus.mask() || k.value > modulus.mask())
    throw HcryptError("ciphertext or keystream out of range for modulus");
  const std::uint64_t r = (c.value - k.value) & modulus.mask();
  if (modulus.bits() == 64) return static_cast<std::int64_t>(r);
  if (r >= modulus.half())
    return static_cast<std::int64_t>(r) - static_cast<std::int64_t>(modulus.mask()) - 1;
  return static_cast<std::int64_t>(r);
}

Ciphertext add_ct(Ciphertext a, Ciphertext b) {
  if (a.modulus != b.modulus) throw HcryptError("ciphertext modulus mismatch");
  return Ciphertext{(a.value + b.value) & a.modulus.mask(), a.modulus};
}

Keystream add_keys(Keystream a, Keystream b, Modulus modulus) {
  return Keystream{(a.value + b.value) & modulus.mask()};
}

MasterSecret MasterSecret::random() {
  MasterSecret s;
  random_bytes(s.bytes);
  return s;
}

SessionKey SessionKey::random() {
  SessionKey s;
  random_bytes(s.bytes);
  return s;
}

KeyPair KeyPair::generate() {
  std::array<std::uint8_t, 32> seed{};
  random_bytes(seed);
  KeyPair kp = from_seed(seed);
  sodium_memzero(seed.data(), seed.size());
  return kp;
}

KeyPair KeyPair::from_seed(std::span<const std::uint8_t, 32> seed) {
  ensure_sodium();
  KeyPair kp;
  std::copy(seed.begin(), seed.end(), kp.private_key.bytes.begin());
  crypto_scalarmult_base(kp.public_key.bytes.data(), kp.private_key.bytes.data());
  return kp;
}

DerivationLabel DerivationLabel::pis(std::string_view product_id) {
  return {std::string(product_id), LabelKind::kPis, {}};
}

DerivationLabel DerivationLabel::bid_key(std::string_view product_id) {
  return {std::string(product_id), LabelKind::kBidKey, {}};
}

DerivationLabel DerivationLabel::factor(std::string_view product_id, std::uint32_t attribute,
                                        std::uint32_t value) {
  return {std::string(product_id), LabelKind::kFactor, {attribute, value}};
}

DerivationLabel DerivationLabel::coeff(std::string_view product_id, std::uint32_t attr_i,
                                       std::uint32_t attr_j, std::uint32_t value_a,
                                       std::uint32_t value_b) {
  return {std::string(product_id), LabelKind::kCoeff, {attr_i, attr_j, value_a, value_b}};
}

Bytes encode_label(const MasterSecret& master, const DerivationLabel& label) {
  if (label.product_id.empty()) throw HcryptError("label: empty product id");
  if (label.product_id.find(static_cast<char>(kSeparator)) != std::string::npos)
    throw HcryptError("label: product id contains the 0x1F separator");
  if (label.indices.size() != expected_indices(label.kind))
    throw HcryptError("label: wrong number of indices for kind");

  Bytes out;
  out.reserve(label.product_id.size() + 2 + 32 + 1 + 16);
  out.insert(out.end(), label.product_id.begin(), label.product_id.end());
  out.push_back(kSeparator);
  out.insert(out.end(), master.bytes.begin(), master.bytes.end());
  out.push_back(kSeparator);
  out.push_back(static_cast<std::uint8_t>(label.kind));
  for (std::uint32_t idx : label.indices) append_be32(out, idx);
  return out;
}

Keystream derive_keystream(const MasterSecret& master, const DerivationLabel& label) {
  ensure_sodium();
  Bytes encoded = encode_label(master, label);
  std::array<std::uint8_t, crypto_hash_sha256_BYTES> digest{};
  crypto_hash_sha256(digest.data(), encoded.data(), encoded.size());
  sodium_memzero(encoded.data(), encoded.size());
  return Keystream{from_be_bytes(ByteView(digest.data(), 8))};
}

Bytes seal_session_key(const SessionKey& key, const PublicKey& recipient) {
  ensure_sodium();
  std::array<std::uint8_t, 32> esk{};
  std::array<std::uint8_t, 32> epk{};
  std::array<std::uint8_t, 32> shared{};
  random_bytes(esk);
  crypto_scalarmult_base(epk.data(), esk.data());
  if (crypto_scalarmult(shared.data(), esk.data(), recipient.bytes.data()) != 0)
    throw HcryptError("sealed box: degenerate recipient public key");
  auto k = seal_key(shared.data(), epk.data(), recipient.bytes.data());

  Bytes out(kSealedSessionKeySize);
  std::copy(epk.begin(), epk.end(), out.begin());
  // The derived key is unique per ephemeral key, so a zero nonce is safe.
  const std::array<std::uint8_t, crypto_aead_chacha20poly1305_ietf_NPUBBYTES> nonce{};
  unsigned long long clen = 0;
  crypto_aead_chacha20poly1305_ietf_encrypt(out.data() + 32, &clen, key.bytes.data(),
                                            key.bytes.size(), nullptr, 0, nullptr,
                                            nonce.data(), k.data());
  sodium_memzero(esk.data(), esk.size());
  sodium_memzero(shared.data(), shared.size());
  sodium_memzero(k.data(), k.size());
  return out;
}

std::optional<SessionKey> open_session_key(ByteView blob, const KeyPair& recipient) {
  ensure_sodium();
  if (blob.size() != kSealedSessionKeySize) return std::nullopt;
  std::array<std::uint8_t, 32> shared{};
  if (crypto_scalarmult(shared.data(), recipient.private_key.bytes.data(), blob.data()) != 0)
    return std::nullopt;
  auto k = seal_key(shared.data(), blob.data(), recipient.public_key.bytes.data());
  const std::array<std::uint8_t, crypto_aead_chacha20poly1305_ietf_NPUBBYTES> nonce{};
  SessionKey key;
  unsigned long long mlen = 0;
  const int rc = crypto_aead_chacha20poly1305_ietf_decrypt(
      key.bytes.data(), &mlen, nullptr, blob.data() + 32, blob.size() - 32, nullptr, 0,
      nonce.data(), k.data());
  sodium_memzero(shared.data(), shared.size());
  sodium_memzero(k.data(), k.size());
  if (rc != 0 || mlen != key.bytes.size()) {
    sodium_memzero(key.bytes.data(), key.bytes.size());
    return std::nullopt;
  }
  return key;
}

Bytes aead_seal(ByteView payload, const SessionKey& key, std::string_view context) {
  ensure_sodium();
  constexpr std::size_t kNonce = crypto_aead_chacha20poly1305_ietf_NPUBBYTES;
  Bytes out(kNonce + payload.size() + crypto_aead_chacha20poly1305_ietf_ABYTES);
  random_bytes(std::span(out.data(), kNonce));
  unsigned long long clen = 0;
  crypto_aead_chacha20poly1305_ietf_encrypt(
      out.data() + kNonce, &clen, payload.data(), payload.size(),
      reinterpret_cast<const unsigned char*>(context.data()), context.size(), nullptr,
      out.data(), key.bytes.data());
  out.resize(kNonce + clen);
  return out;
}

std::optional<Bytes> aead_open(ByteView blob, const SessionKey& key, std::string_view context) {
  ensure_sodium();
  constexpr std::size_t kNonce = crypto_aead_chacha20poly1305_ietf_NPUBBYTES;
  if (blob.size() < kAeadOverhead) return std::nullopt;
  Bytes out(blob.size() - kAeadOverhead);
  unsigned long long mlen = 0;
  if (crypto_aead_chacha20poly1305_ietf_decrypt(
          out.data(), &mlen, nullptr, blob.data() + kNonce, blob.size() - kNonce,
          reinterpret_cast<const unsigned char*>(context.data()), context.size(), blob.data(),
          key.bytes.data()) != 0) {
    return std::nullopt;
  }
  out.resize(mlen);
  return out;
}

std::array<std::uint8_t, 8> to_be_bytes(std::uint64_t v) {
  std::array<std::uint8_t, 8> out{};
  for (int i = 7; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v);
    v >>= 8;
  }
  return out;
}

std::uint64_t from_be_bytes(ByteView bytes) {
  if (bytes.size() != 8) throw HcryptError("expected 8 bytes");
  std::uint64_t v = 0;
  for (std::uint8_t b : bytes) v = (v << 8) | b;
  return v;
}

std::string base64_encode(ByteView bytes) {
  ensure_sodium();
  constexpr int kVariant = sodium_base64_VARIANT_ORIGINAL;
  std::string out(sodium_base64_ENCODED_LEN(bytes.size(), kVariant), '\0');
  sodium_bin2base64(out.data(), out.size(), bytes.data(), bytes.size(), kVariant);
  out.resize(std::strlen(out.c_str()));
  return out;
}

Bytes base64_decode(std::string_view text) {
  ensure_sodium();
  Bytes out(text.size() / 4 * 3 + 3);
  std::size_t len = 0;
  const char* end = nullptr;
  if (sodium_base642bin(out.data(), out.size(), text.data(), text.size(), nullptr, &len, &end,
                        sodium_base64_VARIANT_ORIGINAL) != 0 ||
      end != text.data() + text.size()) {
    throw HcryptError("invalid base64");
  }
  out.resize(len);
  return out;
}

std::string ciphertext_to_base64(Ciphertext c) {
  const auto be = to_be_bytes(c.value);
  return base64_encode(be);
}

Ciphertext ciphertext_from_base64(std::string_view text) {
  const Bytes raw = base64_decode(text);
  if (raw.size() != 8) throw HcryptError("ciphertext must decode to 8 bytes");
  return Ciphertext{from_be_bytes(raw), kWordModulus};
}

void random_bytes(std::span<std::uint8_t> out) {
  ensure_sodium();
  randombytes_buf(out.data(), out.size());
}

}  // namespace pprt::hcrypt
