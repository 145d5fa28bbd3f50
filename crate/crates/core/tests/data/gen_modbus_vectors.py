"""Regenerates modbus_vectors.txt with a bit-serial CRC-16/MODBUS model.

Each vector line is: <label> <frame body hex> <crc hex> <full frame hex>.
The full frame appends the CRC low byte first.
"""


def crc16_bitwise(data: bytes) -> int:
    # Shift-register model: feed each data bit LSB first into a reflected
    # 0x8005 register seeded with all ones.
    reg = 0xFFFF
    for byte in data:
        for i in range(8):
            bit = (byte >> i) & 1
            fb = (reg ^ bit) & 1
            reg >>= 1
            if fb:
                reg ^= 0xA001
    return reg


VECTORS = [
    ("empty", b""),
    ("check-123456789", b"123456789"),
    ("req-1-0-5", bytes([0x01, 0x03, 0x00, 0x00, 0x00, 0x05])),
    ("req-1-4-2", bytes([0x01, 0x03, 0x00, 0x04, 0x00, 0x02])),
    ("req-1-0-6", bytes([0x01, 0x03, 0x00, 0x00, 0x00, 0x06])),
    ("req-1-100-1", bytes([0x01, 0x03, 0x00, 0x64, 0x00, 0x01])),
    ("resp-1-1280", bytes([0x01, 0x03, 0x02, 0x05, 0x00])),
    ("resp-1-0-65535", bytes([0x01, 0x03, 0x04, 0x00, 0x00, 0xFF, 0xFF])),
    ("resp-1-7-8-9", bytes([0x01, 0x03, 0x06, 0x00, 0x07, 0x00, 0x08, 0x00, 0x09])),
    ("exc-1-1", bytes([0x01, 0x83, 0x01])),
    ("exc-1-2", bytes([0x01, 0x83, 0x02])),
    ("exc-1-3", bytes([0x01, 0x83, 0x03])),
]


def main() -> None:
    lines = ["# label body_hex crc_hex frame_hex (crc appended low byte first)"]
    for label, body in VECTORS:
        crc = crc16_bitwise(body)
        frame = body + bytes([crc & 0xFF, crc >> 8])
        lines.append(f"{label} {body.hex() or '-'} {crc:04x} {frame.hex()}")
    with open("modbus_vectors.txt", "w") as f:
        f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
