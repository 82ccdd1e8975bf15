#include "resmo/auth.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/rand.h>

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

#include "resmo/errors.hpp"

namespace resmo {

namespace {

std::string to_hex(const unsigned char* p, std::size_t n)
{
    static const char* digits = "0123456789abcdef";
    std::string out(2 * n, '0');
    for (std::size_t i = 0; i < n; ++i) {
        out[2 * i] = digits[p[i] >> 4];
        out[2 * i + 1] = digits[p[i] & 15];
    }
    return out;
}

bool from_hex(const std::string& s, std::vector<unsigned char>& out)
{
    if (s.empty() || s.size() % 2)
        return false;
    out.resize(s.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i) {
        unsigned v = 0;
        const auto [ptr, ec] = std::from_chars(s.data() + 2 * i, s.data() + 2 * i + 2, v, 16);
        if (ec != std::errc{} || ptr != s.data() + 2 * i + 2)
            return false;
        out[i] = static_cast<unsigned char>(v);
    }
    return true;
}

} // namespace

std::string hash_secret(const std::string& secret, const std::string& salt_hex, int iterations)
{
    std::vector<unsigned char> salt;
    if (!from_hex(salt_hex, salt))
        throw ArgumentError("salt is not hex");
    if (iterations < 1)
        throw ArgumentError("iterations must be positive");
    unsigned char out[32];
    if (PKCS5_PBKDF2_HMAC(secret.data(), static_cast<int>(secret.size()), salt.data(), static_cast<int>(salt.size()),
                          iterations, EVP_sha256(), sizeof out, out) != 1)
        throw Error("PBKDF2 failed");
    return to_hex(out, sizeof out);
}

std::string random_hex(std::size_t n)
{
    std::vector<unsigned char> buf(n);
    if (RAND_bytes(buf.data(), static_cast<int>(n)) != 1)
        throw Error("random generator failed");
    return to_hex(buf.data(), n);
}

std::string make_credential_line(const std::string& user, const std::string& secret, int iterations)
{
    if (user.empty() || user.find_first_of(":\n \t") != std::string::npos)
        throw ArgumentError("user name must be non-empty without ':' or whitespace");
    if (secret.empty())
        throw ArgumentError("secret is empty");
    const std::string salt = random_hex(16);
    return user + ':' + salt + ':' + std::to_string(iterations) + ':' + hash_secret(secret, salt, iterations);
}

std::map<std::string, Credential> parse_credentials(const std::string& text)
{
    std::map<std::string, Credential> out;
    std::istringstream in(text);
    std::string line;
    std::size_t ln = 0;
    while (std::getline(in, line)) {
        ++ln;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty() || line[0] == '#')
            continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string part;
        while (std::getline(ss, part, ':'))
            f.push_back(part);
        if (f.size() != 4 || f[0].empty())
            throw DecodeError(ln, "credential line needs user:salt:iterations:hash");
        Credential c;
        c.salt_hex = f[1];
        c.hash_hex = f[3];
        for (auto* s : {&c.salt_hex, &c.hash_hex})
            for (auto& ch : *s)
                ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        std::vector<unsigned char> tmp;
        if (!from_hex(c.salt_hex, tmp) || !from_hex(c.hash_hex, tmp) || tmp.size() != 32)
            throw DecodeError(ln, "salt and hash must be hex, hash 32 bytes");
        const auto [ptr, ec] = std::from_chars(f[2].data(), f[2].data() + f[2].size(), c.iterations);
        if (ec != std::errc{} || ptr != f[2].data() + f[2].size() || c.iterations < 1)
            throw DecodeError(ln, "bad iteration count '" + f[2] + "'");
        if (!out.emplace(f[0], c).second)
            throw DecodeError(ln, "duplicate user " + f[0]);
    }
    return out;
}

std::map<std::string, Credential> load_credentials(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open credential file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_credentials(ss.str());
}

Authenticator::Authenticator(std::map<std::string, Credential> users, std::chrono::seconds ttl,
                             std::function<Clock::time_point()> now)
    : users_(std::move(users)), ttl_(ttl), now_(std::move(now))
{
    if (ttl_.count() <= 0)
        throw ConfigError("token lifetime must be positive");
    int iterations = 100000;
    if (!users_.empty())
        iterations = users_.begin()->second.iterations;
    dummy_ = {std::string(32, '0'), iterations, std::string(64, '0')};
}

std::string Authenticator::login(const std::string& user, const std::string& secret)
{
    const auto it = users_.find(user);
    const Credential& c = it == users_.end() ? dummy_ : it->second;
    const std::string h = hash_secret(secret, c.salt_hex, c.iterations);
    const bool match = CRYPTO_memcmp(h.data(), c.hash_hex.data(), h.size()) == 0;
    if (it == users_.end() || !match)
        throw AuthError("invalid credentials");
    std::string token = random_hex(32);
    std::lock_guard lock(mutex_);
    tokens_[token] = {user, now_() + ttl_};
    return token;
}

std::string Authenticator::check(const std::string& token)
{
    std::lock_guard lock(mutex_);
    const auto it = tokens_.find(token);
    if (it == tokens_.end())
        throw AuthError("unknown or revoked token");
    if (now_() >= it->second.expires) {
        tokens_.erase(it);
        throw AuthError("token expired");
    }
    return it->second.user;
}

void Authenticator::revoke(const std::string& token)
{
    std::lock_guard lock(mutex_);
    tokens_.erase(token);
}

} // namespace resmo
