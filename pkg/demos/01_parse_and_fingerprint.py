"""
Parsing advertisements and naming the device
============================================

Decode a raw advertising payload into AD structures, then run the bundled
fingerprint registry over every device in the synthetic scene.
"""

from medjack import bundled_registry, bundled_scene, classify, encode_advertisement, parse_advertisement

# a payload is a run of length-type-value structures: flags, a 16-bit UUID, a name
raw = bytes.fromhex("020106" "03031f18" "0a09636d2d64656d6f2d31")
pdu = parse_advertisement(raw)
for s in pdu.structures:
    print(f"type 0x{s.ad_type:02x}  value {s.value.hex()}")
print("name:", pdu.local_name, " uuids:", sorted(str(u) for u in pdu.service_uuids))

# encoding is the inverse, byte for byte
assert encode_advertisement(pdu) == raw

# %%
# Every advertising device in the scene should land on exactly its own rule.
registry = bundled_registry()
for device in bundled_scene().devices:
    if device.advertising is None:
        print(f"{device.name:<28} (silent)")
        continue
    matches = classify(parse_advertisement(device.advertising.payload), registry)
    best = matches[0]
    print(f"{device.name:<28} -> {best.rule_id:<10} {best.confidence.value:<8} {sorted(best.matched_fields)}")
