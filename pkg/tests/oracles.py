"""Hand-built oracle tables shared by several test modules.

The words below were packed by hand from the field layout
(mode << 27 | rd << 20 | out << 13 | xfer << 12 | addr) and port bits
N=0, E=1, S=2, W=3, PE=4, TSV=5, LOCAL=6.
"""

# ROUTE rd=TSV out=E+S+LOCAL
A = 0x0208C000
# ROUTE rd=W out=S+LOCAL
B = 0x00888000
# ROUTE rd=N out=LOCAL
C = 0x00180000
# SPWR rd=LOCAL xfer sp=0x020
D = 0x24001020

# 2x2 mesh, routers numbered row-major.  Row 0 broadcasts a flit from the
# root's TSV FIFO, row 1 finishes the broadcast in the bottom row, row 2 has
# every router store its copy at scratchpad address 0x20.
DISPATCH_2X2 = (
    (A, B, 0, 0),
    (0, 0, C, C),
    (D, D, D, D),
)

PROGRAM_2X2 = """\
.mesh 2 2
row rep=1 ; ROUTE rd=TSV out=E+S+LOCAL ; ROUTE rd=W out=S+LOCAL ; 0:1 1:2
row rep=1 ; ROUTE rd=N out=LOCAL ; IDLE ; 2-3:1
row rep=1 ; SPWR rd=LOCAL xfer sp=0x020 ; IDLE ; 0-3:1
"""
