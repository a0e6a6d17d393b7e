"""Vehicle-centric certificate revocation list distribution.

Submodules:

* ``crypto``: hashing, one-way key chains, MACs and signatures
* ``bloom``: Bloom filter sizing, analytics and signed fingerprints
* ``credentials``: pseudonym batches and compact revocation entries
* ``authority``: revocation ledger, base/delta CRL generation
* ``vehicle``: the receiving side (piece validation, delta buffering, relay)
* ``netsim``: discrete-event distribution simulator
* ``cli``: command-line front end
"""

__version__ = "0.1.0"
